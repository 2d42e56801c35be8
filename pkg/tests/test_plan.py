import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from ampcap.controls import ControlSpec
from ampcap.plan import (
    Tour,
    best_2opt_delta,
    export_session,
    l1_distance_matrix,
    plan_session,
    read_session,
    sample_configs,
    solve_tour,
    tour_length,
)

TWO_KNOBS = [ControlSpec("a"), ControlSpec("b")]


def exhaustive_optimum(matrix, home):
    others = [i for i in range(len(matrix)) if i != home]
    best = np.inf
    for perm in itertools.permutations(others):
        best = min(best, tour_length(np.array((home,) + perm), matrix))
    return best


def test_sample_reproducible_unit_square():
    a = sample_configs(TWO_KNOBS, 500, seed=1)
    b = sample_configs(TWO_KNOBS, 500, seed=1)
    assert a.shape == (500, 2) and np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1


def test_sample_discrete_levels():
    v = sample_configs([ControlSpec("s", "discrete", 3)], 300, seed=0)
    assert set(np.unique(v)) == {0.0, 0.5, 1.0}


def test_sample_means_and_ks():
    v = sample_configs([ControlSpec(n) for n in "abc"], 10000, seed=3)
    assert np.all(np.abs(v.mean(axis=0) - 0.5) < 0.05)
    for k in range(3):
        assert stats.kstest(v[:, k], "uniform").statistic < 0.02


def test_l1_examples():
    d = l1_distance_matrix([[0, 0], [1, 1], [0, 0]])
    assert d[0, 1] == 2 and d[0, 2] == 0


def test_l1_matches_double_loop(rng):
    c = rng.random((10, 3))
    d = l1_distance_matrix(c)
    for i in range(10):
        for j in range(10):
            assert d[i, j] == sum(abs(c[i, k] - c[j, k]) for k in range(3))


def test_l1_mixed_dimensions():
    with pytest.raises(ValueError):
        l1_distance_matrix([[0, 0], [1]])


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 12), st.integers(1, 4), st.integers(0, 10_000))
def test_distance_matrix_is_metric(n, k, seed):
    c = np.random.default_rng(seed).random((n, k))
    d = l1_distance_matrix(c)
    assert np.array_equal(d, d.T) and np.all(np.diag(d) == 0) and np.all(d >= 0)
    assert np.all(d[:, :, None] <= d[:, None, :] + d.T[None, :, :] + 1e-12)


def test_line_tour_is_out_and_back():
    m = l1_distance_matrix(np.array([[0.0], [1.0], [2.0], [3.0]]))
    tour = solve_tour(m, home_index=0)
    assert exhaustive_optimum(m, 0) == 6
    assert tour_length(tour, m) == 6


def test_tour_small_cases():
    assert tour_length(solve_tour(np.zeros((1, 1)), 0), np.zeros((1, 1))) == 0
    m = np.array([[0.0, 0.7], [0.7, 0.0]])
    assert tour_length(solve_tour(m, 0), m) == pytest.approx(1.4)
    with pytest.raises(ValueError):
        solve_tour(np.zeros((0, 0)), 0)


def test_tour_near_optimal_small_instances():
    within = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 9))
        c = np.vstack([rng.random((n - 1, 3)), np.zeros((1, 3))])
        m = l1_distance_matrix(c)
        tour = solve_tour(m, n - 1)
        within += tour_length(tour, m) <= 1.05 * exhaustive_optimum(m, n - 1) + 1e-12
    assert within >= 90


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 40), st.integers(0, 10_000))
def test_tour_properties(n, seed):
    rng = np.random.default_rng(seed)
    c = rng.random((n, 2))
    m = l1_distance_matrix(c)
    tour = solve_tour(m, 0)
    assert sorted(tour.order.tolist()) == list(range(n)) and tour.order[0] == 0
    length = tour_length(tour, m)
    assert length <= tour.construction_length + 1e-9
    if tour.converged:
        assert best_2opt_delta(tour.order, m) >= -1e-9


def test_accepted_2opt_moves_strictly_shorten():
    rng = np.random.default_rng(5)
    m = l1_distance_matrix(rng.random((30, 2)))
    from ampcap.plan import _nearest_neighbour, _two_opt_pass

    route = _nearest_neighbour(m, 0)
    last = tour_length(route, m)
    while _two_opt_pass(m, route, 1e-10):
        now = tour_length(route, m)
        assert now < last
        last = now


def test_fig3_scenario_beats_random_and_nn():
    c = sample_configs(TWO_KNOBS, 500, seed=1)
    nodes = np.vstack([c, np.zeros((1, 2))])
    m = l1_distance_matrix(nodes)
    tour = solve_tour(m, 500)
    rng = np.random.default_rng(0)
    random_mean = np.mean([tour_length(np.concatenate([[500], rng.permutation(500)]), m) for _ in range(100)])
    assert tour_length(tour, m) < random_mean
    assert tour_length(tour, m) <= tour.construction_length


def test_session_roundtrip_and_deltas(tmp_path):
    c = sample_configs(TWO_KNOBS, 3, seed=2)
    session, tour = plan_session(TWO_KNOBS, c)
    path = export_session(session, tmp_path / "s.json")
    back = read_session(path)
    assert np.array_equal(back.configs, session.configs)
    assert np.array_equal(back.travel, session.travel)
    m = l1_distance_matrix(np.vstack([c, np.zeros((1, 2))]))
    assert back.travel.sum() + back.return_travel == pytest.approx(tour_length(tour, m), abs=1e-12)
    assert back.per_knob_travel().sum() == pytest.approx(back.tour_length)


def test_session_starts_and_ends_at_home():
    c = sample_configs(TWO_KNOBS, 20, seed=4)
    session, _ = plan_session(TWO_KNOBS, c)
    assert session.travel[0] == pytest.approx(np.abs(session.configs[0]).sum())
    assert session.return_travel == pytest.approx(np.abs(session.configs[-1]).sum())
    assert sorted(map(tuple, session.configs)) == sorted(map(tuple, c))


def test_empty_tour_export_errors(tmp_path):
    from ampcap.plan import Session, session_from_tour

    with pytest.raises(ValueError):
        session_from_tour(Tour(np.array([0]), 0), np.zeros((0, 2)), TWO_KNOBS)
    with pytest.raises(ValueError):
        export_session(Session(TWO_KNOBS, np.zeros((0, 2)), np.zeros(0), 0.0), tmp_path / "s.json")

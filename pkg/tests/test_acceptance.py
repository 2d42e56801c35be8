"""Acceptance criteria, each at its stated tolerance.

Every criterion records one PASS/FAIL line, printed in the pytest terminal
summary. Criteria 4, 5 and 8 share one end-to-end run (plan, capture, train),
which takes several minutes.
"""
import itertools
import time

import numpy as np
import pytest

from ampcap.controls import amp_control_space
from ampcap.dataset import random_split, read_manifest, write_manifest
from ampcap.engine import StreamSession, benchmark_throughput
from ampcap.nn import Checkpoint, gradient_check
from ampcap.plan import (
    l1_distance_matrix,
    plan_session,
    sample_configs,
    solve_tour,
    tour_length,
)
from ampcap.rig import (
    VirtualAmpConfig,
    _draw_segment,
    capture_session,
    generate_corpus,
    reprocess,
    virtual_amp_process,
)
from ampcap.train import TrainConfig, control_interpolation_eval, esr_loss, train, validate

from conftest import ACCEPTANCE_LINES

SAMPLE_RATE = 8000
SEGMENT = SAMPLE_RATE // 2
N_TRAIN, N_VAL = 500, 100
E2E_TRAIN = dict(hidden_size=32, batch_size=12, iterations=20000, learning_rate=3e-3, final_learning_rate=2e-4,
                 loss="esr", warmup=1000, truncation=1000, validate_every=1000, validate_at=(100,), seed=0)


def record(name, ok, detail):
    ACCEPTANCE_LINES.append((name, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, detail


@pytest.fixture(scope="module")
def e2e(tmp_path_factory):
    t0 = time.perf_counter()
    specs = amp_control_space()
    configs = sample_configs(specs, N_TRAIN + N_VAL, seed=0)
    session, _ = plan_session(specs, configs)
    corpus = generate_corpus(SAMPLE_RATE, seed=0)
    manifest = tmp_path_factory.mktemp("e2e") / "manifest.jsonl"
    ds = capture_session(session, corpus, SEGMENT, seed=0)
    ds = random_split(ds, N_TRAIN, N_VAL, seed=0)
    write_manifest(ds, manifest)
    ckpt, report = train(ds, TrainConfig(**E2E_TRAIN))
    val = validate(ckpt, ds.val)
    return dict(ds=ds, corpus=corpus, manifest=manifest, ckpt=ckpt, report=report, val=val,
                seconds=time.perf_counter() - t0)


def test_criterion_1_gradcheck():
    t0 = time.perf_counter()
    lstm = gradient_check("lstm", tolerance=1e-4, seed=0, hidden_size=4, input_size=3, steps=8, step=1e-5)
    conv = gradient_check("conv", tolerance=1e-4, seed=0, out_channels=2, in_channels=2, order=3, step=1e-5)
    secs = time.perf_counter() - t0
    worst = max(lstm.max_rel_error, conv.max_rel_error)
    record("1 gradcheck", worst < 1e-4 and secs < 10,
           f"lstm={lstm.max_rel_error:.2e} conv={conv.max_rel_error:.2e} (<1e-4) in {secs:.2f}s (<10s)")


def test_criterion_2_loss_identities():
    rng = np.random.default_rng(0)
    y = rng.standard_normal(4000)
    p = y + 0.1 * rng.standard_normal(4000)
    base = esr_loss(p, y)
    checks = {
        "esr(y,y)=0": esr_loss(y, y) == 0.0,
        "esr(0,y)=1": esr_loss(np.zeros_like(y), y) == 1.0,
        "esr(2y,y)=1": esr_loss(2 * y, y) == 1.0,
    }
    worst = 0.0
    for alpha in (0.1, 10.0):
        worst = max(worst, abs(esr_loss(alpha * p, alpha * y) - base) / base)
    checks["scale"] = worst <= 1e-9
    record("2 loss identities", all(checks.values()),
           " ".join(f"{k}:{'ok' if v else 'FAIL'}" for k, v in checks.items()) + f" scale_rel={worst:.1e}")


def test_criterion_3_tsp_quality():
    t0 = time.perf_counter()
    within = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(3, 9))
        nodes = np.vstack([np.zeros((1, 5)), rng.random((n - 1, 5))])
        m = l1_distance_matrix(nodes)
        tour = solve_tour(m, 0)
        best = min(tour_length(np.array((0,) + p), m) for p in itertools.permutations(range(1, n)))
        within += tour_length(tour, m) <= 1.05 * best + 1e-12
    specs = amp_control_space()[:2]
    configs = sample_configs(specs, 500, seed=0)
    session, tour = plan_session(specs, configs)
    m = l1_distance_matrix(np.vstack([configs, np.zeros((1, 2))]))
    rng = np.random.default_rng(1)
    random_mean = np.mean([tour_length(np.concatenate([[500], rng.permutation(500)]), m) for _ in range(100)])
    length = tour_length(tour, m)
    secs = time.perf_counter() - t0
    ok = within >= 90 and length < random_mean and length <= tour.construction_length and secs < 60
    record("3 tsp quality", ok,
           f"within_1.05={within}/100 (>=90) tour={length:.2f} nn={tour.construction_length:.2f} "
           f"random_mean={random_mean:.2f} in {secs:.1f}s (<60s)")


def test_criterion_4_end_to_end(e2e):
    esr = e2e["val"].mean_esr
    secs = e2e["seconds"]
    record("4 end-to-end", esr < 0.02 and secs < 1800,
           f"val_mean_esr={esr:.4f} (<0.02) best_iter={e2e['report'].best_iteration} in {secs / 60:.1f}min (<30min)")


def test_validation_trend_on_desk_scale_run(e2e):
    val = dict(e2e["report"].validation)
    assert val[5000] < val[100]


def test_criterion_5_control_generalization(e2e):
    ds, ckpt = e2e["ds"], e2e["ckpt"]
    clips = [c for c in e2e["corpus"].clips if len(c) >= SEGMENT]

    def render(cfg, x):
        return virtual_amp_process(VirtualAmpConfig.from_controls(ds.control_names, cfg, SAMPLE_RATE), x)

    rep = control_interpolation_eval(ckpt, ds, render, lambda rng: _draw_segment(rng, clips, SEGMENT),
                                     probes=50, seed=123)
    record("5 control generalization", len(rep.unseen) == 50 and rep.ratio <= 2.0,
           f"unseen={rep.unseen_mean:.4f} seen={rep.seen_mean:.4f} ratio={rep.ratio:.2f} (<=2)")


def test_criterion_6_streaming_equivalence():
    rate = 48000
    ckpt = Checkpoint.fresh(32, list(amp_control_space_names()), rate, np.random.default_rng(0))
    x = (0.5 * np.random.default_rng(1).standard_normal(10 * rate)).astype(np.float32)
    controls = np.linspace(0.1, 0.9, 5)
    ref = StreamSession(ckpt, controls).process_block(x)
    mismatched = []
    for block in (1, 17, 64, 4096):
        s = StreamSession(ckpt, controls)
        out = np.empty_like(ref)
        for i in range(0, len(x), block):
            s.process_block(x[i:i + block], out=out[i:i + block])
        if not np.array_equal(out, ref):
            mismatched.append(block)
    record("6 streaming equivalence", not mismatched,
           f"blocks=1,17,64,4096 on {len(x)} samples; mismatched={mismatched or 'none'}")


def amp_control_space_names():
    return [c.name for c in amp_control_space()]


def test_criterion_7_realtime():
    ckpt = Checkpoint.fresh(32, amp_control_space_names(), 48000, np.random.default_rng(0))
    rep = benchmark_throughput(ckpt, duration=5.0, reference_rate=48000)
    record("7 real-time", rep.rtf > 1.0, f"rtf={rep.rtf:.2f} (>1) at 48 kHz, H=32")


def test_criterion_8_capture_consistency(e2e):
    ds = read_manifest(e2e["manifest"])
    bad = [e.id for e in ds.examples if not np.array_equal(reprocess(ds, e), e.target)]
    record("8 capture consistency", not bad and len(ds.examples) == N_TRAIN + N_VAL,
           f"{len(ds.examples) - len(bad)}/{len(ds.examples)} entries bit-exact after manifest roundtrip")

"""Measurement planning: uniform control-space sampling and a short L1 tour through it.

The tour starts and ends at the all-zeros configuration. It is built by
nearest-neighbour construction and then improved with first-improvement 2-opt.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np
from scipy.spatial.distance import cdist

from .controls import CONTINUOUS, ControlSpec, validate_controls

SESSION_FORMAT = "ampcap-session"
SESSION_VERSION = 1
MAX_2OPT_PASSES = 50
# a 2-opt move must shorten the tour by more than this to be accepted
IMPROVEMENT_EPS = 1e-10


def sample_configs(specs: list[ControlSpec], n: int, seed: int) -> np.ndarray:
    """Draw ``n`` configurations [n, K]: knobs uniform on [0, 1], switches uniform over levels."""
    if n < 1:
        raise ValueError("need at least one configuration")
    if not specs:
        raise ValueError("control space has no controls")
    rng = np.random.default_rng(seed)
    out = np.empty((n, len(specs)))
    for k, spec in enumerate(specs):
        if spec.kind == CONTINUOUS:
            out[:, k] = rng.random(n)
        else:
            out[:, k] = rng.integers(0, spec.levels, n) / (spec.levels - 1)
    return out


def l1_distance_matrix(configs) -> np.ndarray:
    c = np.asarray(configs, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] == 0:
        raise ValueError(f"expected a nonempty [N, K] configuration array, got shape {c.shape}")
    return cdist(c, c, metric="cityblock")


@dataclass
class Tour:
    """Closed tour as a node sequence beginning at ``home``; the return edge is implicit."""

    order: np.ndarray
    home: int
    construction_length: float = float("nan")
    passes: int = 0
    converged: bool = True

    def __len__(self) -> int:
        return len(self.order)


@numba.njit(cache=True)
def _nearest_neighbour(dist, home):
    n = dist.shape[0]
    visited = np.zeros(n, np.bool_)
    order = np.empty(n, np.int64)
    order[0] = home
    visited[home] = True
    cur = home
    for pos in range(1, n):
        best = -1
        best_d = np.inf
        for j in range(n):
            if not visited[j] and dist[cur, j] < best_d:
                best_d = dist[cur, j]
                best = j
        order[pos] = best
        visited[best] = True
        cur = best
    return order


@numba.njit(cache=True)
def _two_opt_pass(dist, route, eps):
    """One first-improvement sweep over all segment reversals; returns the number applied."""
    n = route.shape[0]
    applied = 0
    for i in range(1, n - 1):
        for j in range(i + 1, n):
            a = route[i - 1]
            b = route[i]
            c = route[j]
            e = route[(j + 1) % n]
            delta = dist[a, c] + dist[b, e] - dist[a, b] - dist[c, e]
            if delta < -eps:
                lo, hi = i, j
                while lo < hi:
                    tmp = route[lo]
                    route[lo] = route[hi]
                    route[hi] = tmp
                    lo += 1
                    hi -= 1
                applied += 1
    return applied


def tour_length(tour: Tour | np.ndarray, matrix: np.ndarray) -> float:
    order = tour.order if isinstance(tour, Tour) else np.asarray(tour)
    if len(order) <= 1:
        return 0.0
    nxt = np.roll(order, -1)
    return float(matrix[order, nxt].sum())


def best_2opt_delta(order: np.ndarray, matrix: np.ndarray) -> float:
    """Most negative length change available from any single 2-opt move (0 if none helps)."""
    n = len(order)
    best = 0.0
    for i in range(1, n - 1):
        for j in range(i + 1, n):
            a, b, c, e = order[i - 1], order[i], order[j], order[(j + 1) % n]
            best = min(best, matrix[a, c] + matrix[b, e] - matrix[a, b] - matrix[c, e])
    return best


def solve_tour(matrix: np.ndarray, home_index: int = 0, max_passes: int = MAX_2OPT_PASSES) -> Tour:
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    n = matrix.shape[0]
    if n == 0:
        raise ValueError("cannot build a tour over zero nodes")
    if matrix.shape != (n, n):
        raise ValueError(f"distance matrix must be square, got {matrix.shape}")
    if not 0 <= home_index < n:
        raise ValueError(f"home index {home_index} out of range for {n} nodes")
    route = _nearest_neighbour(matrix, home_index)
    nn_len = tour_length(route, matrix)
    passes = 0
    converged = n < 4
    while not converged and passes < max_passes:
        passes += 1
        if _two_opt_pass(matrix, route, IMPROVEMENT_EPS) == 0:
            converged = True
    return Tour(route, home_index, nn_len, passes, converged)


@dataclass
class Session:
    controls: list[ControlSpec]
    configs: np.ndarray  # [N, K] in visiting order
    travel: np.ndarray  # [N] L1 distance from the previous stop (home for the first)
    return_travel: float

    @property
    def tour_length(self) -> float:
        return float(self.travel.sum() + self.return_travel)

    def per_knob_travel(self) -> np.ndarray:
        k = len(self.controls)
        path = np.vstack([np.zeros((1, k)), self.configs, np.zeros((1, k))])
        return np.abs(np.diff(path, axis=0)).sum(axis=0)


def plan_session(specs: list[ControlSpec], configs: np.ndarray) -> tuple[Session, Tour]:
    """Order ``configs`` into a session that starts and ends with every control at zero."""
    configs = np.asarray(configs, dtype=np.float64)
    nodes = np.vstack([configs, np.zeros((1, configs.shape[1]))])
    home = len(configs)
    matrix = l1_distance_matrix(nodes)
    tour = solve_tour(matrix, home)
    return session_from_tour(tour, configs, specs, matrix), tour


def session_from_tour(tour: Tour, configs: np.ndarray, specs: list[ControlSpec],
                      matrix: np.ndarray | None = None) -> Session:
    """Session visiting ``configs`` in tour order; ``tour.home`` may be a virtual node."""
    stops = [int(i) for i in tour.order if i != tour.home]
    if not stops:
        raise ValueError("tour visits no configurations")
    configs = np.asarray(configs, dtype=np.float64)
    ordered = configs[stops]
    k = configs.shape[1]
    path = np.vstack([np.zeros((1, k)), ordered])
    travel = np.abs(np.diff(path, axis=0)).sum(axis=1)
    return Session(list(specs), ordered, travel, float(np.abs(ordered[-1]).sum()))


def export_session(session: Session, path) -> Path:
    if len(session.configs) == 0:
        raise ValueError("cannot export an empty session")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "format": SESSION_FORMAT,
        "version": SESSION_VERSION,
        "controls": [c.to_dict() for c in session.controls],
        "steps": [
            {"step": i, "controls": [float(v) for v in cfg], "travel": float(d)}
            for i, (cfg, d) in enumerate(zip(session.configs, session.travel))
        ],
        "return_travel": session.return_travel,
        "tour_length": session.tour_length,
        "per_knob_travel": [float(v) for v in session.per_knob_travel()],
    }
    path.write_text(json.dumps(doc, indent=1), encoding="utf-8")
    return path


def read_session(path) -> Session:
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    if doc.get("format") != SESSION_FORMAT or doc.get("version") != SESSION_VERSION:
        raise ValueError(f"{path}: not a version-{SESSION_VERSION} session file")
    specs = [ControlSpec.from_dict(c) for c in doc["controls"]]
    steps = doc["steps"]
    if not steps:
        raise ValueError(f"{path}: session has no steps")
    if [s["step"] for s in steps] != list(range(len(steps))):
        raise ValueError(f"{path}: steps are not numbered 0..{len(steps) - 1}")
    configs = np.array([validate_controls(s["controls"], specs, f"step {s['step']}") for s in steps])
    travel = np.array([s["travel"] for s in steps], dtype=np.float64)
    return Session(specs, configs, travel, float(doc["return_travel"]))

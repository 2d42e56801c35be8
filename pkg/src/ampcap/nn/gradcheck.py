"""Analytic-versus-finite-difference gradient checks on small random instances."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .conv import CausalConvParams, causal_conv_backward, causal_conv_forward
from .lstm import DenseParams, LstmParams, LstmState, batch_backward, batch_forward

# denominators below this are treated as this, so near-zero components compare absolutely
REL_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    model: str
    tolerance: float
    step: float
    max_rel_error: float
    per_array: dict[str, float] = field(default_factory=dict)
    n_components: int = 0

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error) and self.max_rel_error < self.tolerance)

    def summary(self) -> str:
        status = "ok" if self.passed else "fail"
        return (f"model={self.model} max_grad_rel_err={self.max_rel_error:.3e} "
                f"tol={self.tolerance:g} components={self.n_components} status={status}")


def central_differences(loss: Callable[[], float], arrays: dict[str, np.ndarray], step: float):
    """Perturb every component of every array in place (restoring it) and difference the loss."""
    out = {}
    for name, arr in arrays.items():
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        g_flat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss()
            flat[i] = orig - step
            down = loss()
            flat[i] = orig
            g_flat[i] = (up - down) / (2.0 * step)
        out[name] = grad
    return out


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return np.abs(analytic - numeric) / denom


def _compare(model, analytic, numeric, tolerance, step) -> GradCheckReport:
    per = {k: float(relative_errors(analytic[k], numeric[k]).max()) for k in analytic}
    return GradCheckReport(
        model=model,
        tolerance=tolerance,
        step=step,
        max_rel_error=max(per.values()),
        per_array=per,
        n_components=sum(a.size for a in analytic.values()),
    )


def check_lstm(hidden_size=4, input_size=3, steps=8, seed=0, step=1e-5, tolerance=1e-4,
               corrupt: bool = False) -> GradCheckReport:
    """MSE loss of the LSTM + dense head against a random target, in float64."""
    rng = np.random.default_rng(seed)
    h = hidden_size
    params = LstmParams(
        rng.uniform(-0.8, 0.8, (4 * h, input_size)),
        rng.uniform(-0.8, 0.8, (4 * h, h)),
        rng.uniform(-0.5, 0.5, 4 * h),
    )
    head = DenseParams(rng.uniform(-0.8, 0.8, (1, h)), rng.uniform(-0.5, 0.5, 1))
    x = rng.uniform(-1.0, 1.0, (1, steps, input_size))
    target = rng.uniform(-1.0, 1.0, (1, steps))
    h0 = rng.uniform(-0.5, 0.5, (1, h))
    c0 = rng.uniform(-0.5, 0.5, (1, h))

    def loss() -> float:
        y, _ = batch_forward(params, head, x, h0, c0)
        return float(np.mean((y - target) ** 2))

    y, cache = batch_forward(params, head, x, h0, c0)
    dy = 2.0 * (y - target) / y.size
    gp, gh = batch_backward(params, head, cache, dy)
    analytic = {**{f"lstm.{k}": v for k, v in gp.arrays().items()},
                **{f"head.{k}": v for k, v in gh.arrays().items()}}
    if corrupt:
        analytic["lstm.recurrent_weights"].reshape(-1)[0] *= 2.0
    arrays = {**{f"lstm.{k}": v for k, v in params.arrays().items()},
              **{f"head.{k}": v for k, v in head.arrays().items()}}
    numeric = central_differences(loss, arrays, step)
    return _compare("lstm", analytic, numeric, tolerance, step)


def check_conv(out_channels=2, in_channels=2, order=3, steps=12, seed=0, step=1e-5,
               tolerance=1e-4, activation="tanh", corrupt: bool = False) -> GradCheckReport:
    """Squared-error loss through a causal conv layer with ``order + 1`` taps, in float64."""
    rng = np.random.default_rng(seed)
    params = CausalConvParams(
        rng.uniform(-0.8, 0.8, (out_channels, in_channels, order + 1)),
        rng.uniform(-0.5, 0.5, out_channels),
        activation,
    )
    x = rng.uniform(-1.0, 1.0, (steps, in_channels))
    target = rng.uniform(-1.0, 1.0, (steps, out_channels))

    def loss() -> float:
        return float(np.sum((causal_conv_forward(params, x) - target) ** 2))

    dy = 2.0 * (causal_conv_forward(params, x) - target)
    d_k, d_b, d_x = causal_conv_backward(params, x, dy)
    analytic = {"kernels": d_k, "bias": d_b, "inputs": d_x}
    if corrupt:
        analytic["kernels"].reshape(-1)[0] *= 2.0
    numeric = central_differences(loss, {"kernels": params.kernels, "bias": params.bias, "inputs": x}, step)
    return _compare("conv", analytic, numeric, tolerance, step)


def gradient_check(model: str = "lstm", tolerance: float = 1e-4, seed: int = 0, **kwargs) -> GradCheckReport:
    if model == "lstm":
        return check_lstm(seed=seed, tolerance=tolerance, **kwargs)
    if model == "conv":
        return check_conv(seed=seed, tolerance=tolerance, **kwargs)
    raise ValueError(f"unknown model {model!r}; expected 'lstm' or 'conv'")

"""Causal 1-D convolution layer: y_t = f(sum_i W_i x_{t-i} + b)."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lstm import ShapeError

ACTIVATIONS = ("tanh", "identity")


@dataclass
class CausalConvParams:
    kernels: np.ndarray  # [p, q, n+1]; tap i multiplies x_{t-i}
    bias: np.ndarray  # [p]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.kernels.ndim != 3 or self.kernels.shape[2] < 1:
            raise ShapeError(f"kernels must be [p, q, taps], got {self.kernels.shape}")
        if self.bias.shape != (self.kernels.shape[0],):
            raise ShapeError(f"bias shape {self.bias.shape} does not match {self.kernels.shape[0]} outputs")

    @property
    def taps(self) -> int:
        return self.kernels.shape[2]

    def arrays(self) -> dict[str, np.ndarray]:
        return {"kernels": self.kernels, "bias": self.bias}


def _preactivation(params: CausalConvParams, x: np.ndarray) -> np.ndarray:
    n_t = x.shape[0]
    pre = np.broadcast_to(params.bias, (n_t, params.bias.shape[0])).copy()
    for i in range(min(params.taps, n_t)):
        # x_{t-i} for t >= i; earlier samples are implicit zeros
        pre[i:] += x[: n_t - i] @ params.kernels[:, :, i].T
    return pre


def _check(params: CausalConvParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=params.kernels.dtype)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(f"inputs must be a nonempty [T, q] array, got {x.shape}")
    if x.shape[1] != params.kernels.shape[1]:
        raise ShapeError(f"inputs have {x.shape[1]} channels, layer expects {params.kernels.shape[1]}")
    return x


def causal_conv_forward(params: CausalConvParams, inputs: np.ndarray) -> np.ndarray:
    """Map ``inputs`` [T, q] to outputs [T, p] with zero left padding."""
    x = _check(params, inputs)
    pre = _preactivation(params, x)
    return np.tanh(pre) if params.activation == "tanh" else pre


def causal_conv_backward(params: CausalConvParams, inputs: np.ndarray, output_grads: np.ndarray):
    """Gradients (d_kernels, d_bias, d_inputs) given dLoss/dOutput [T, p]."""
    x = _check(params, inputs)
    pre = _preactivation(params, x)
    dy = np.asarray(output_grads, dtype=x.dtype)
    if dy.shape != pre.shape:
        raise ShapeError(f"output_grads shape {dy.shape}, expected {pre.shape}")
    dpre = dy * (1.0 - np.tanh(pre) ** 2) if params.activation == "tanh" else dy
    n_t = x.shape[0]
    d_k = np.zeros_like(params.kernels)
    d_x = np.zeros_like(x)
    for i in range(min(params.taps, n_t)):
        d_k[:, :, i] = dpre[i:].T @ x[: n_t - i]
        d_x[: n_t - i] += dpre[i:] @ params.kernels[:, :, i]
    return d_k, dpre.sum(axis=0), d_x

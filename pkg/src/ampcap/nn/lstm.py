"""Single-layer LSTM with an affine output head.

Gates are stacked in the order input, forget, cell candidate, output along the
leading ``4H`` axis of both weight matrices and the bias vector.

The numba kernels keep every inner loop in "axpy" form (no floating point
reductions across lanes except the fixed-length head dot product), so the
compiled code evaluates each sample identically no matter how a sequence is
chunked. That property is what makes streaming output bit-exact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from numba import types
from numba.extending import overload

GATES = ("input", "forget", "cell", "output")


class ShapeError(ValueError):
    """Raised when array dimensions do not agree with the model geometry."""


@dataclass
class LstmParams:
    input_weights: np.ndarray  # [4H, D]
    recurrent_weights: np.ndarray  # [4H, H]
    biases: np.ndarray  # [4H]

    def __post_init__(self):
        four_h = self.biases.shape[0]
        if four_h % 4 or four_h == 0:
            raise ShapeError(f"bias length {four_h} is not a positive multiple of 4")
        h = four_h // 4
        if self.recurrent_weights.shape != (four_h, h):
            raise ShapeError(
                f"recurrent_weights has shape {self.recurrent_weights.shape}, expected {(four_h, h)}"
            )
        if self.input_weights.ndim != 2 or self.input_weights.shape[0] != four_h:
            raise ShapeError(
                f"input_weights has shape {self.input_weights.shape}, expected ({four_h}, D)"
            )

    @property
    def hidden_size(self) -> int:
        return self.biases.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.input_weights.shape[1]

    @property
    def dtype(self):
        return self.biases.dtype

    @classmethod
    def init(cls, hidden_size: int, input_size: int, rng: np.random.Generator, dtype=np.float32):
        """Uniform(-1/sqrt(H), 1/sqrt(H)) weights and zero biases."""
        if hidden_size < 1 or input_size < 1:
            raise ShapeError("hidden_size and input_size must be positive")
        bound = 1.0 / np.sqrt(hidden_size)
        wx = rng.uniform(-bound, bound, (4 * hidden_size, input_size))
        wh = rng.uniform(-bound, bound, (4 * hidden_size, hidden_size))
        return cls(wx.astype(dtype), wh.astype(dtype), np.zeros(4 * hidden_size, dtype))

    @classmethod
    def zeros(cls, hidden_size: int, input_size: int, dtype=np.float32):
        return cls(
            np.zeros((4 * hidden_size, input_size), dtype),
            np.zeros((4 * hidden_size, hidden_size), dtype),
            np.zeros(4 * hidden_size, dtype),
        )

    def astype(self, dtype) -> "LstmParams":
        return LstmParams(
            self.input_weights.astype(dtype),
            self.recurrent_weights.astype(dtype),
            self.biases.astype(dtype),
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "input_weights": self.input_weights,
            "recurrent_weights": self.recurrent_weights,
            "biases": self.biases,
        }


@dataclass
class LstmState:
    hidden: np.ndarray  # [H]
    cell: np.ndarray  # [H]

    @classmethod
    def zeros(cls, hidden_size: int, dtype=np.float32):
        return cls(np.zeros(hidden_size, dtype), np.zeros(hidden_size, dtype))

    def copy(self) -> "LstmState":
        return LstmState(self.hidden.copy(), self.cell.copy())


@dataclass
class DenseParams:
    """Affine map from the hidden vector to one output sample."""

    weights: np.ndarray  # [1, H]
    bias: np.ndarray  # [1]

    @classmethod
    def zeros(cls, hidden_size: int, dtype=np.float32):
        return cls(np.zeros((1, hidden_size), dtype), np.zeros(1, dtype))

    @classmethod
    def init(cls, hidden_size: int, rng: np.random.Generator, dtype=np.float32):
        bound = 1.0 / np.sqrt(hidden_size)
        w = rng.uniform(-bound, bound, (1, hidden_size))
        return cls(w.astype(dtype), np.zeros(1, dtype))

    def astype(self, dtype) -> "DenseParams":
        return DenseParams(self.weights.astype(dtype), self.bias.astype(dtype))

    def arrays(self) -> dict[str, np.ndarray]:
        return {"weights": self.weights, "bias": self.bias}


# ---------------------------------------------------------------------------
# kernels


# float32 tanh: Eigen-style rational approximation (max rel. error ~3e-7), written so
# LLVM can vectorize it. float64 keeps libm tanh for gradient checking.
_TANH_CLAMP = 7.90531110763549805
_TANH_P = (4.89352455891786e-03, 6.37261928875436e-04, 1.48572235717979e-05, 5.12229709037114e-08,
           -8.60467152213735e-11, 2.00018790482477e-13, -2.76076847742355e-16)
_TANH_Q = (4.89352518554385e-03, 2.26843463243900e-03, 1.18534705686654e-04, 1.19825839466702e-06)


def _tanh(v):
    return np.tanh(v)


@overload(_tanh, jit_options={"cache": True, "error_model": "numpy"})
def _tanh_impl(v):
    if v == types.float32:
        lim = np.float32(_TANH_CLAMP)
        p0, p1, p2, p3, p4, p5, p6 = (np.float32(c) for c in _TANH_P)
        q0, q1, q2, q3 = (np.float32(c) for c in _TANH_Q)

        def rational(v):
            x = min(max(v, -lim), lim)
            x2 = x * x
            p = ((((((p6 * x2 + p5) * x2 + p4) * x2 + p3) * x2 + p2) * x2 + p1) * x2 + p0) * x
            q = ((q3 * x2 + q2) * x2 + q1) * x2 + q0
            return p / q

        return rational
    return lambda v: np.tanh(v)


def _sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


@overload(_sigmoid, jit_options={"cache": True, "error_model": "numpy"})
def _sigmoid_impl(v):
    if v == types.float32:
        half = np.float32(0.5)
        return lambda v: half * _tanh(half * v) + half
    return lambda v: 1.0 / (1.0 + np.exp(-v))


@numba.njit(cache=True, error_model="numpy")
def _run_sequence(wx_t, wh_t, b, w_out, b_out, xs, h, c, z, ys):
    """Advance (h, c) in place over ``xs`` [T, D], writing outputs to ``ys``."""
    n_in = wx_t.shape[0]
    n_h = wh_t.shape[0]
    for t in range(xs.shape[0]):
        for j in range(4 * n_h):
            z[j] = b[j]
        for k in range(n_in):
            xk = xs[t, k]
            for j in range(4 * n_h):
                z[j] += wx_t[k, j] * xk
        for k in range(n_h):
            hk = h[k]
            for j in range(4 * n_h):
                z[j] += wh_t[k, j] * hk
        for j in range(2 * n_h):
            z[j] = _sigmoid(z[j])
        for j in range(2 * n_h, 3 * n_h):
            z[j] = _tanh(z[j])
        for j in range(3 * n_h, 4 * n_h):
            z[j] = _sigmoid(z[j])
        for j in range(n_h):
            cj = z[n_h + j] * c[j] + z[j] * z[2 * n_h + j]
            c[j] = cj
            h[j] = z[3 * n_h + j] * _tanh(cj)
        acc = b_out
        for j in range(n_h):
            acc += w_out[j] * h[j]
        ys[t] = acc


@numba.njit(cache=True, error_model="numpy")
def _batch_forward(wx_t, wh_t, b, w_out, b_out, xs, h0, c0, ys, gates, cells, tcells, hiddens):
    """Forward over a minibatch ``xs`` [B, T, D], caching activations for BPTT.

    ``cells`` and ``hiddens`` are [B, T+1, H] with index 0 holding the initial state;
    ``gates`` [B, T, 4H] receives post-activation gate values and ``tcells`` [B, T, H]
    the squashed cell state.
    """
    n_b, n_t, n_in = xs.shape
    n_h = wh_t.shape[0]
    for bi in range(n_b):
        for j in range(n_h):
            cells[bi, 0, j] = c0[bi, j]
            hiddens[bi, 0, j] = h0[bi, j]
        for t in range(n_t):
            z = gates[bi, t]
            for j in range(4 * n_h):
                z[j] = b[j]
            for k in range(n_in):
                xk = xs[bi, t, k]
                for j in range(4 * n_h):
                    z[j] += wx_t[k, j] * xk
            h_prev = hiddens[bi, t]
            for k in range(n_h):
                hk = h_prev[k]
                for j in range(4 * n_h):
                    z[j] += wh_t[k, j] * hk
            for j in range(2 * n_h):
                z[j] = _sigmoid(z[j])
            for j in range(2 * n_h, 3 * n_h):
                z[j] = _tanh(z[j])
            for j in range(3 * n_h, 4 * n_h):
                z[j] = _sigmoid(z[j])
            c_prev = cells[bi, t]
            c_new = cells[bi, t + 1]
            tc = tcells[bi, t]
            h_new = hiddens[bi, t + 1]
            for j in range(n_h):
                cj = z[n_h + j] * c_prev[j] + z[j] * z[2 * n_h + j]
                c_new[j] = cj
                tc[j] = _tanh(cj)
                h_new[j] = z[3 * n_h + j] * tc[j]
            acc = b_out
            for j in range(n_h):
                acc += w_out[j] * h_new[j]
            ys[bi, t] = acc


@numba.njit(cache=True, error_model="numpy")
def _batch_backward(wh, w_out, gates, cells, tcells, dys, dz_all, t_stop, one):
    """Backpropagate ``dys`` [B, T] through time.

    Writes pre-activation gate gradients into ``dz_all`` [B, T, 4H]. Gradient flow
    is cut below step ``t_stop``; rows before it are left untouched.
    """
    n_b, n_t, four_h = gates.shape
    n_h = four_h // 4
    dh = np.zeros(n_h, gates.dtype)
    dc = np.zeros(n_h, gates.dtype)
    for bi in range(n_b):
        dh[:] = 0
        dc[:] = 0
        for t in range(n_t - 1, t_stop - 1, -1):
            g = gates[bi, t]
            dz = dz_all[bi, t]
            tc = tcells[bi, t]
            c_prev = cells[bi, t]
            dy = dys[bi, t]
            for j in range(n_h):
                dhj = dh[j] + w_out[j] * dy
                ig = g[j]
                fg = g[n_h + j]
                gg = g[2 * n_h + j]
                og = g[3 * n_h + j]
                tcj = tc[j]
                dcj = dc[j] + dhj * og * (one - tcj * tcj)
                dz[j] = dcj * gg * ig * (one - ig)
                dz[n_h + j] = dcj * c_prev[j] * fg * (one - fg)
                dz[2 * n_h + j] = dcj * ig * (one - gg * gg)
                dz[3 * n_h + j] = dhj * tcj * og * (one - og)
                dc[j] = dcj * fg
            dh[:] = 0
            for j in range(four_h):
                dzj = dz[j]
                for k in range(n_h):
                    dh[k] += wh[j, k] * dzj


# ---------------------------------------------------------------------------
# public operations


def _check_state(params: LstmParams, state: LstmState):
    h = params.hidden_size
    if state.hidden.shape != (h,) or state.cell.shape != (h,):
        raise ShapeError(f"state shapes {state.hidden.shape}/{state.cell.shape}, expected ({h},)")


def _kernel_args(params: LstmParams, head: DenseParams):
    dtype = params.dtype
    return (
        np.ascontiguousarray(params.input_weights.T),
        np.ascontiguousarray(params.recurrent_weights.T),
        params.biases,
        np.ascontiguousarray(head.weights[0].astype(dtype)),
        head.bias.astype(dtype)[0],
    )


def lstm_step(params: LstmParams, state: LstmState, x: np.ndarray) -> tuple[LstmState, np.ndarray]:
    """One recurrence step; returns the new state and its hidden vector."""
    x = np.asarray(x, dtype=params.dtype)
    if x.shape != (params.input_size,):
        raise ShapeError(f"input has shape {x.shape}, expected ({params.input_size},)")
    _check_state(params, state)
    new = state.copy()
    head = DenseParams.zeros(params.hidden_size, params.dtype)
    wx_t, wh_t, b, w_out, b_out = _kernel_args(params, head)
    z = np.empty(4 * params.hidden_size, params.dtype)
    ys = np.empty(1, params.dtype)
    _run_sequence(wx_t, wh_t, b, w_out, b_out, x[None, :], new.hidden, new.cell, z, ys)
    return new, new.hidden.copy()


def lstm_forward(
    params: LstmParams, head: DenseParams, inputs: np.ndarray, initial: LstmState
) -> tuple[np.ndarray, LstmState]:
    """Run ``inputs`` [T, D] through the network; returns outputs [T] and the final state."""
    inputs = np.ascontiguousarray(inputs, dtype=params.dtype)
    _check_state(params, initial)
    final = initial.copy()
    if inputs.shape[0] == 0:
        return np.empty(0, params.dtype), final
    if inputs.ndim != 2 or inputs.shape[1] != params.input_size:
        raise ShapeError(f"inputs have shape {inputs.shape}, expected (T, {params.input_size})")
    ys = np.empty(inputs.shape[0], params.dtype)
    z = np.empty(4 * params.hidden_size, params.dtype)
    _run_sequence(*_kernel_args(params, head), inputs, final.hidden, final.cell, z, ys)
    return ys, final


@dataclass
class ForwardCache:
    inputs: np.ndarray
    gates: np.ndarray
    cells: np.ndarray
    tcells: np.ndarray
    hiddens: np.ndarray

    @property
    def final_state(self) -> tuple[np.ndarray, np.ndarray]:
        return self.hiddens[:, -1].copy(), self.cells[:, -1].copy()


def batch_forward(params: LstmParams, head: DenseParams, inputs: np.ndarray,
                  h0: np.ndarray | None = None, c0: np.ndarray | None = None):
    """Minibatch forward over ``inputs`` [B, T, D]; returns outputs [B, T] and a cache."""
    inputs = np.ascontiguousarray(inputs, dtype=params.dtype)
    if inputs.ndim != 3 or inputs.shape[2] != params.input_size:
        raise ShapeError(f"inputs have shape {inputs.shape}, expected (B, T, {params.input_size})")
    n_b, n_t, _ = inputs.shape
    n_h = params.hidden_size
    dt = params.dtype
    h0 = np.zeros((n_b, n_h), dt) if h0 is None else np.ascontiguousarray(h0, dt)
    c0 = np.zeros((n_b, n_h), dt) if c0 is None else np.ascontiguousarray(c0, dt)
    ys = np.empty((n_b, n_t), dt)
    gates = np.empty((n_b, n_t, 4 * n_h), dt)
    cells = np.empty((n_b, n_t + 1, n_h), dt)
    tcells = np.empty((n_b, n_t, n_h), dt)
    hiddens = np.empty((n_b, n_t + 1, n_h), dt)
    _batch_forward(*_kernel_args(params, head), inputs, h0, c0, ys, gates, cells, tcells, hiddens)
    return ys, ForwardCache(inputs, gates, cells, tcells, hiddens)


def batch_backward(params: LstmParams, head: DenseParams, cache: ForwardCache,
                   output_grads: np.ndarray, t_stop: int = 0) -> tuple[LstmParams, DenseParams]:
    """Gradients of a scalar loss given dLoss/dOutput [B, T].

    ``t_stop`` truncates backpropagation: no gradient flows into steps before it.
    """
    dt = params.dtype
    dys = np.ascontiguousarray(output_grads, dtype=dt)
    n_b, n_t, four_h = cache.gates.shape
    if dys.shape != (n_b, n_t):
        raise ShapeError(f"output_grads shape {dys.shape}, expected {(n_b, n_t)}")
    n_h = four_h // 4
    dz = np.zeros((n_b, n_t, four_h), dt)
    w_out = np.ascontiguousarray(head.weights[0].astype(dt))
    _batch_backward(params.recurrent_weights, w_out, cache.gates, cache.cells, cache.tcells, dys, dz,
                    t_stop, dt.type(1))
    dz2 = dz.reshape(-1, four_h)
    d_wx = dz2.T @ cache.inputs.reshape(-1, params.input_size)
    d_wh = dz2.T @ cache.hiddens[:, :-1].reshape(-1, n_h)
    d_b = dz2.sum(axis=0)
    h_all = cache.hiddens[:, 1:].reshape(-1, n_h)
    d_w_out = (dys.reshape(-1) @ h_all)[None, :]
    d_b_out = np.array([dys.sum()], dt)
    return LstmParams(d_wx, d_wh, d_b), DenseParams(d_w_out, d_b_out)


def lstm_backward(params: LstmParams, head: DenseParams, inputs: np.ndarray,
                  initial: LstmState, output_grads: np.ndarray) -> tuple[LstmParams, DenseParams]:
    """Full-sequence BPTT for a single sequence ``inputs`` [T, D]."""
    inputs = np.asarray(inputs)
    output_grads = np.asarray(output_grads)
    if output_grads.shape != (inputs.shape[0],):
        raise ShapeError(f"output_grads has shape {output_grads.shape}, expected ({inputs.shape[0]},)")
    _check_state(params, initial)
    _, cache = batch_forward(params, head, inputs[None], initial.hidden[None], initial.cell[None])
    return batch_backward(params, head, cache, output_grads[None])

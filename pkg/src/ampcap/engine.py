"""Streaming inference: sample-by-sample conditioned LSTM with live control changes."""
from __future__ import annotations

import csv
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .nn.checkpoint import Checkpoint
from .nn.lstm import _sigmoid, _tanh

REFERENCE_RATE = 48000


class ControlClampWarning(UserWarning):
    pass


@numba.njit(cache=True, error_model="numpy")
def _stream(wx_t, wh_t, b, w_out, b_out, audio, target, ctl, alpha, h, c, z, ys):
    """Same arithmetic as the sequence kernel, with controls read from ``ctl``.

    When ``alpha < 1`` each control glides one-pole towards ``target`` per sample.
    """
    n_in = wx_t.shape[0]
    n_h = wh_t.shape[0]
    n_ctl = ctl.shape[0]
    smooth = alpha < 1
    for t in range(audio.shape[0]):
        if smooth:
            for k in range(n_ctl):
                ctl[k] += alpha * (target[k] - ctl[k])
        for j in range(4 * n_h):
            z[j] = b[j]
        for k in range(n_in):
            xk = audio[t] if k == 0 else ctl[k - 1]
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
def _fir(taps, ring, pos, x, y):
    n_taps = taps.shape[0]
    for t in range(x.shape[0]):
        ring[pos] = x[t]
        acc = 0.0
        idx = pos
        for k in range(n_taps):
            acc += taps[k] * ring[idx]
            idx -= 1
            if idx < 0:
                idx = n_taps - 1
        y[t] = acc
        pos += 1
        if pos == n_taps:
            pos = 0
    return pos


@dataclass
class CabinetIR:
    taps: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=np.float64)
        if self.taps.ndim != 1 or self.taps.size < 1:
            raise ValueError("impulse response needs at least one tap")

    @classmethod
    def from_wav(cls, path) -> "CabinetIR":
        from .audio import read_wav

        taps, rate = read_wav(path)
        return cls(taps.astype(np.float64), rate)


class CabinetFilter:
    """Direct-form FIR with a ring-buffer history, so blocks chain seamlessly."""

    def __init__(self, ir: CabinetIR):
        self.taps = ir.taps
        self.ring = np.zeros(len(ir.taps))
        self.pos = 0

    def process(self, x: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = np.empty(len(x)) if out is None else out
        self.pos = _fir(self.taps, self.ring, self.pos, x, y)
        return y


def apply_cabinet_ir(samples: np.ndarray, ir: CabinetIR) -> np.ndarray:
    """Causal FIR convolution truncated to the input length."""
    return CabinetFilter(ir).process(samples)


def loudness_match(samples: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Scale ``samples`` so their RMS equals the reference RMS."""
    ref = np.sqrt(np.mean(np.square(np.asarray(reference, dtype=np.float64))))
    cur = np.sqrt(np.mean(np.square(np.asarray(samples, dtype=np.float64))))
    if ref == 0.0:
        raise ValueError("reference is silent; cannot match loudness")
    if cur == 0.0:
        raise ValueError("signal is silent; cannot match loudness")
    return np.asarray(samples) * (ref / cur)


class StreamSession:
    """One audio stream through a trained model. Not safe for concurrent use."""

    def __init__(self, ckpt: Checkpoint, controls=None, sample_rate: int | None = None,
                 cabinet: CabinetIR | None = None, smoothing_ms: float | None = None):
        if sample_rate is not None and sample_rate != ckpt.sample_rate:
            raise ValueError(f"stream rate {sample_rate} Hz does not match the model's {ckpt.sample_rate} Hz")
        if cabinet is not None and cabinet.sample_rate != ckpt.sample_rate:
            raise ValueError(f"impulse response rate {cabinet.sample_rate} Hz != model rate {ckpt.sample_rate} Hz")
        self.ckpt = ckpt
        self.sample_rate = ckpt.sample_rate
        lstm = ckpt.lstm.astype(np.float32)
        self._wx_t = np.ascontiguousarray(lstm.input_weights.T)
        self._wh_t = np.ascontiguousarray(lstm.recurrent_weights.T)
        self._b = lstm.biases
        self._w_out = np.ascontiguousarray(ckpt.head.weights[0], dtype=np.float32)
        self._b_out = np.float32(ckpt.head.bias[0])
        n_h = ckpt.hidden_size
        self.hidden = np.zeros(n_h, np.float32)
        self.cell = np.zeros(n_h, np.float32)
        self._z = np.empty(4 * n_h, np.float32)
        k = len(ckpt.control_names)
        self._target = np.zeros(k, np.float32)
        self._ctl = np.zeros(k, np.float32)
        if smoothing_ms:
            self._alpha = np.float32(1.0 - np.exp(-1000.0 / (smoothing_ms * self.sample_rate)))
        else:
            self._alpha = np.float32(1.0)
        self.cabinet = CabinetFilter(cabinet) if cabinet is not None else None
        if controls is not None:
            self.set_controls(controls)
            self._ctl[:] = self._target

    @property
    def control_names(self) -> list[str]:
        return list(self.ckpt.control_names)

    @property
    def controls(self) -> np.ndarray:
        return self._target.astype(np.float64)

    def set_controls(self, values) -> None:
        """Takes effect from the next processed sample; out-of-range values are clamped."""
        if isinstance(values, dict):
            unknown = set(values) - set(self.control_names)
            if unknown:
                raise KeyError(f"unknown controls {sorted(unknown)}")
            v = self._target.astype(np.float64)
            for name, val in values.items():
                v[self.control_names.index(name)] = float(val)
        else:
            v = np.asarray(values, dtype=np.float64).reshape(-1)
            if v.shape != self._target.shape:
                raise ValueError(f"expected {len(self._target)} control values, got {v.size}")
        clipped = np.clip(v, 0.0, 1.0)
        if np.any(clipped != v):
            warnings.warn(f"control values {v.tolist()} clamped to [0, 1]", ControlClampWarning, stacklevel=2)
        self._target[:] = clipped
        if self._alpha == 1:
            self._ctl[:] = self._target

    def reset(self) -> None:
        self.hidden[:] = 0
        self.cell[:] = 0

    def process_block(self, samples: np.ndarray, out: np.ndarray | None = None) -> np.ndarray:
        x = np.ascontiguousarray(samples, dtype=np.float32)
        if x.ndim != 1 or x.size == 0:
            raise ValueError("process_block expects a nonempty mono block")
        y = np.empty(x.size, np.float32) if out is None else out
        _stream(self._wx_t, self._wh_t, self._b, self._w_out, self._b_out, x, self._target, self._ctl,
                self._alpha, self.hidden, self.cell, self._z, y)
        if self.cabinet is not None:
            y[:] = self.cabinet.process(y)
        return y


def process_file(session: StreamSession, samples: np.ndarray, automation=(), block_size: int = 512) -> np.ndarray:
    """Render ``samples`` with ``automation`` events (time_s, control, value) applied sample-accurately."""
    events = sorted(automation, key=lambda e: e[0])
    out = np.empty(len(samples), np.float32)
    pos = 0
    boundaries = [(int(round(t * session.sample_rate)), name, value) for t, name, value in events]
    i = 0
    while pos < len(samples):
        while i < len(boundaries) and boundaries[i][0] <= pos:
            session.set_controls({boundaries[i][1]: boundaries[i][2]})
            i += 1
        stop = min(len(samples), pos + block_size)
        if i < len(boundaries):
            stop = min(stop, max(boundaries[i][0], pos + 1))
        session.process_block(samples[pos:stop], out=out[pos:stop])
        pos = stop
    return out


def read_automation(path) -> list[tuple[float, str, float]]:
    """Lines of ``time_s,control,value``; blank lines and ``#`` comments are ignored."""
    events = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected time_s,control,value")
            if row[0].strip() == "time_s":
                continue
            events.append((float(row[0]), row[1].strip(), float(row[2])))
    return events


@dataclass
class ThroughputReport:
    hidden_size: int
    samples: int
    seconds: float
    reference_rate: int = REFERENCE_RATE

    @property
    def samples_per_second(self) -> float:
        return self.samples / self.seconds

    @property
    def rtf(self) -> float:
        return self.samples_per_second / self.reference_rate

    def summary(self) -> str:
        return (f"hidden_size={self.hidden_size} samples_per_s={self.samples_per_second:.0f} "
                f"rtf={self.rtf:.3f} reference_rate={self.reference_rate}")


def benchmark_throughput(ckpt: Checkpoint, duration: float = 2.0, block_size: int = 512,
                         reference_rate: int = REFERENCE_RATE, seed: int = 0) -> ThroughputReport:
    """Steady-state single-stream throughput on ``duration`` seconds of noise at ``reference_rate``."""
    rng = np.random.default_rng(seed)
    n = int(duration * reference_rate)
    x = (0.5 * rng.standard_normal(n)).astype(np.float32)
    session = StreamSession(ckpt, controls=np.full(len(ckpt.control_names), 0.5))
    out = np.empty(block_size, np.float32)
    session.process_block(x[:block_size], out=out)  # compile and warm caches
    session.reset()
    t0 = time.perf_counter()
    for start in range(0, n - block_size + 1, block_size):
        session.process_block(x[start:start + block_size], out=out)
    elapsed = time.perf_counter() - t0
    processed = (n // block_size) * block_size
    return ThroughputReport(ckpt.hidden_size, processed, elapsed, reference_rate)

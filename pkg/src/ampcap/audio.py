"""Mono WAV input/output on top of scipy.io.wavfile."""
from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np
from scipy.io import wavfile


def write_wav(path, samples: np.ndarray, sample_rate: int) -> Path:
    """Write 32-bit float mono WAV; samples are stored bit-exactly."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(samples, dtype=np.float32)
    if data.ndim != 1:
        raise ValueError(f"expected mono samples, got shape {data.shape}")
    wavfile.write(path, int(sample_rate), data)
    return path


def read_wav(path) -> tuple[np.ndarray, int]:
    """Read a mono WAV as float32 in [-1, 1]; integer PCM is rescaled."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"audio file not found: {path}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", wavfile.WavFileWarning)
        rate, data = wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: expected mono audio, got {data.shape[1]} channels")
    if data.dtype == np.uint8:
        data = (data.astype(np.float32) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.integer):
        data = data.astype(np.float32) / float(np.iinfo(data.dtype).max + 1)
    return data.astype(np.float32, copy=False), int(rate)

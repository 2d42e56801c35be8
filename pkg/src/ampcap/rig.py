"""Virtual capture rig: a five-knob reference amplifier and a session runner.

Signal chain of :class:`VirtualAmp`, with its fixed knob maps:

    pre-gain      g = 1 + 11 * volume**2                    (audio taper, 0..+21.6 dB)
    waveshaper    tanh(g * x)
    bass shelf    RBJ low shelf at 250 Hz, gain -9 + 18 * bass dB
    treble shelf  RBJ high shelf at 1500 Hz, gain -9 + 18 * treble dB
    tone cut      one-pole lowpass, cutoff f_hi * (400 / f_hi) ** tone_cut,
                  f_hi = min(12 kHz, 0.4 * sample_rate)
    master        output scale 0.25 + 0.75 * master**2

All filters start from zero state at the beginning of every segment.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal

from .audio import read_wav
from .controls import AMP_CONTROLS, ControlSpec
from .dataset import Dataset, ExampleTriple, write_manifest
from .plan import Session

log = logging.getLogger(__name__)

GAIN_MAX = 12.0
SHELF_RANGE_DB = 9.0
BASS_HZ = 250.0
TREBLE_HZ = 1500.0
TONE_CUT_LOW_HZ = 400.0
MASTER_FLOOR = 0.25
DEFAULT_KNOB = 0.5
# segments quieter than this RMS are redrawn during capture
MIN_SEGMENT_RMS = 0.03


@dataclass
class VirtualAmpConfig:
    volume: float = DEFAULT_KNOB
    bass: float = DEFAULT_KNOB
    treble: float = DEFAULT_KNOB
    tone_cut: float = DEFAULT_KNOB
    master: float = DEFAULT_KNOB
    sample_rate: int = 8000

    def __post_init__(self):
        for name in AMP_CONTROLS:
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"knob {name!r}={v} outside [0, 1]")
        if self.sample_rate < 4000:
            raise ValueError("sample rate must be at least 4 kHz for the tone stack")

    @classmethod
    def from_controls(cls, names, values, sample_rate: int) -> "VirtualAmpConfig":
        unknown = set(names) - set(AMP_CONTROLS)
        if unknown:
            raise ValueError(f"virtual amp has no knobs named {sorted(unknown)}")
        return cls(**{n: float(v) for n, v in zip(names, values)}, sample_rate=sample_rate)


def _shelf(kind: str, f0: float, gain_db: float, fs: float):
    """RBJ cookbook shelving biquad with shelf slope 1."""
    a = 10.0 ** (gain_db / 40.0)
    w0 = 2.0 * np.pi * f0 / fs
    cw, sw = np.cos(w0), np.sin(w0)
    alpha = sw / 2.0 * np.sqrt(2.0)
    sa = 2.0 * np.sqrt(a) * alpha
    if kind == "low":
        b = [a * ((a + 1) - (a - 1) * cw + sa), 2 * a * ((a - 1) - (a + 1) * cw), a * ((a + 1) - (a - 1) * cw - sa)]
        den = [(a + 1) + (a - 1) * cw + sa, -2 * ((a - 1) + (a + 1) * cw), (a + 1) + (a - 1) * cw - sa]
    else:
        b = [a * ((a + 1) + (a - 1) * cw + sa), -2 * a * ((a - 1) + (a + 1) * cw), a * ((a + 1) + (a - 1) * cw - sa)]
        den = [(a + 1) - (a - 1) * cw + sa, 2 * ((a - 1) - (a + 1) * cw), (a + 1) - (a - 1) * cw - sa]
    b = np.array(b) / den[0]
    den = np.array(den) / den[0]
    return b, den


def knob_maps(cfg: VirtualAmpConfig) -> dict:
    fs = cfg.sample_rate
    f_hi = min(12000.0, 0.4 * fs)
    return {
        "gain": 1.0 + (GAIN_MAX - 1.0) * cfg.volume**2,
        "bass_db": -SHELF_RANGE_DB + 2 * SHELF_RANGE_DB * cfg.bass,
        "treble_db": -SHELF_RANGE_DB + 2 * SHELF_RANGE_DB * cfg.treble,
        "cutoff_hz": f_hi * (TONE_CUT_LOW_HZ / f_hi) ** cfg.tone_cut,
        "scale": MASTER_FLOOR + (1.0 - MASTER_FLOOR) * cfg.master**2,
    }


class VirtualAmp:
    """Stateful block processor; successive ``process`` calls continue the same stream."""

    def __init__(self, cfg: VirtualAmpConfig):
        self.cfg = cfg
        m = knob_maps(cfg)
        self.gain = m["gain"]
        self.scale = m["scale"]
        fs = cfg.sample_rate
        pole = np.exp(-2.0 * np.pi * m["cutoff_hz"] / fs)
        self.filters = [
            _shelf("low", BASS_HZ, m["bass_db"], fs),
            _shelf("high", TREBLE_HZ, m["treble_db"], fs),
            (np.array([1.0 - pole]), np.array([1.0, -pole])),
        ]
        self.reset()

    def reset(self):
        self.zi = [np.zeros(max(len(b), len(a)) - 1) for b, a in self.filters]

    def process(self, x: np.ndarray) -> np.ndarray:
        y = np.tanh(self.gain * np.asarray(x, dtype=np.float64))
        for n, (b, a) in enumerate(self.filters):
            y, self.zi[n] = signal.lfilter(b, a, y, zi=self.zi[n])
        return (self.scale * y).astype(np.float32)


def virtual_amp_process(cfg: VirtualAmpConfig, segment: np.ndarray) -> np.ndarray:
    """Process one segment from silent filter state."""
    return VirtualAmp(cfg).process(segment)


# ---------------------------------------------------------------------------
# excitation corpus


@dataclass
class ExcitationCorpus:
    clips: list[np.ndarray]
    sample_rate: int
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        for i, c in enumerate(self.clips):
            peak = float(np.max(np.abs(c))) if len(c) else 0.0
            if peak > 1.0:
                raise ValueError(f"corpus clip {i} peaks at {peak:.3f} > 1")

    @classmethod
    def from_directory(cls, path, sample_rate: int) -> "ExcitationCorpus":
        clips, names = [], []
        for f in sorted(Path(path).glob("*.wav")):
            x, rate = read_wav(f)
            if rate != sample_rate:
                log.warning("skipping %s: sample rate %d != %d", f, rate, sample_rate)
                continue
            peak = float(np.max(np.abs(x))) if len(x) else 0.0
            if peak > 1.0:
                x = x / peak
            clips.append(x)
            names.append(f.name)
        if not clips:
            raise ValueError(f"no usable {sample_rate} Hz WAV clips in {path}")
        return cls(clips, sample_rate, names)


def _karplus_strong(rng, f0, n, fs, decay):
    period = max(2, int(round(fs / f0)))
    buf = rng.uniform(-1.0, 1.0, period)
    out = np.empty(n)
    for i in range(n):
        j = i % period
        out[i] = buf[j]
        buf[j] = decay * 0.5 * (buf[j] + buf[(j + 1) % period])
    return out


def _pluck_track(rng, n, fs, chordal: bool):
    out = np.zeros(n)
    t = 0
    while t < n:
        length = int(fs * rng.uniform(0.15, 0.9))
        voices = rng.integers(2, 5) if chordal else 1
        root = 82.4 * 2.0 ** (rng.integers(0, 30) / 12.0)
        amp = rng.uniform(0.2, 1.0)
        for v in range(voices):
            f0 = root * 2.0 ** (rng.choice([0, 4, 7, 12, 3, 5]) / 12.0) if v else root
            seg = _karplus_strong(rng, f0, min(length * 2, n - t), fs, rng.uniform(0.990, 0.999))
            out[t:t + len(seg)] += amp * seg / voices
        t += length
    return out


def _sweep(rng, n, fs):
    t = np.arange(n) / fs
    f_lo, f_hi = 40.0, 0.45 * fs
    dur = n / fs
    k = np.log(f_hi / f_lo)
    phase = 2 * np.pi * f_lo * dur / k * (np.exp(t / dur * k) - 1.0)
    env = rng.uniform(0.1, 1.0) * (0.5 + 0.5 * np.sin(2 * np.pi * rng.uniform(0.2, 2.0) * t) ** 2)
    return env * np.sin(phase)


def _noise_bursts(rng, n, fs):
    out = np.zeros(n)
    t = 0
    while t < n:
        length = min(n - t, int(fs * rng.uniform(0.1, 0.6)))
        burst = rng.standard_normal(length) * np.exp(-np.arange(length) / (fs * rng.uniform(0.03, 0.3)))
        # random one-pole colouring
        pole = rng.uniform(0.0, 0.95)
        burst = signal.lfilter([1.0 - pole], [1.0, -pole], burst)
        out[t:t + length] += rng.uniform(0.05, 0.6) * burst / (np.max(np.abs(burst)) + 1e-12)
        t += length
    return out


def generate_corpus(sample_rate: int, n_clips: int = 24, clip_seconds: float = 4.0,
                    seed: int = 0) -> ExcitationCorpus:
    """Synthetic excitation: plucked notes and strums (most clips), sweeps and noise bursts."""
    rng = np.random.default_rng(seed)
    n = int(clip_seconds * sample_rate)
    kinds = ["pluck", "strum", "pluck", "strum", "sweep", "noise"]
    clips, names = [], []
    for i in range(n_clips):
        kind = kinds[i % len(kinds)]
        if kind == "pluck":
            x = _pluck_track(rng, n, sample_rate, chordal=False)
        elif kind == "strum":
            x = _pluck_track(rng, n, sample_rate, chordal=True)
        elif kind == "sweep":
            x = _sweep(rng, n, sample_rate)
        else:
            x = _noise_bursts(rng, n, sample_rate)
        peak = np.max(np.abs(x))
        x = x * (rng.uniform(0.3, 1.0) / peak)
        clips.append(x.astype(np.float32))
        names.append(f"{kind}{i:03d}")
    return ExcitationCorpus(clips, sample_rate, names)


# ---------------------------------------------------------------------------
# capture


def _draw_segment(rng, clips, segment_length):
    x = None
    for _ in range(32):
        clip = clips[rng.integers(len(clips))]
        start = rng.integers(0, len(clip) - segment_length + 1)
        x = clip[start:start + segment_length]
        if np.sqrt(np.mean(np.square(x, dtype=np.float64))) >= MIN_SEGMENT_RMS:
            break
    return np.array(x, dtype=np.float32)


def capture_session(session: Session, corpus: ExcitationCorpus, segment_length: int, seed: int,
                    manifest_path=None) -> Dataset:
    """Run every session step through the virtual amp on a randomly drawn corpus segment."""
    usable = []
    for i, clip in enumerate(corpus.clips):
        if len(clip) < segment_length:
            name = corpus.names[i] if i < len(corpus.names) else str(i)
            log.warning("corpus clip %s has %d samples < segment length %d; skipped", name, len(clip), segment_length)
        else:
            usable.append(clip)
    if not usable:
        raise ValueError("no corpus clip is long enough for the requested segment length")
    names = [c.name for c in session.controls]
    rng = np.random.default_rng(seed)
    ds = Dataset(corpus.sample_rate, segment_length, list(session.controls))
    for step, values in enumerate(session.configs):
        x = _draw_segment(rng, usable, segment_length)
        cfg = VirtualAmpConfig.from_controls(names, values, corpus.sample_rate)
        y = virtual_amp_process(cfg, x)
        ds.examples.append(ExampleTriple(f"ex{step:05d}", x, y, np.array(values, dtype=np.float64)))
    if manifest_path is not None:
        write_manifest(ds, manifest_path)
    return ds


def reprocess(dataset: Dataset, example: ExampleTriple) -> np.ndarray:
    cfg = VirtualAmpConfig.from_controls(dataset.control_names, example.controls, dataset.sample_rate)
    return virtual_amp_process(cfg, example.input)

import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ampcap.controls import amp_control_space
from ampcap.plan import plan_session, sample_configs
from ampcap.rig import (
    AMP_CONTROLS,
    ExcitationCorpus,
    VirtualAmp,
    VirtualAmpConfig,
    capture_session,
    generate_corpus,
    knob_maps,
    reprocess,
    virtual_amp_process,
)

FS = 8000


def noise(n=8000, seed=0, scale=0.3):
    return (scale * np.random.default_rng(seed).standard_normal(n)).astype(np.float32)


def band_energy(y, lo, hi, fs=FS):
    spec = np.abs(np.fft.rfft(y)) ** 2
    f = np.fft.rfftfreq(len(y), 1 / fs)
    return spec[(f >= lo) & (f < hi)].sum()


def centroid(y, fs=FS):
    spec = np.abs(np.fft.rfft(y)) ** 2
    f = np.fft.rfftfreq(len(y), 1 / fs)
    return (f * spec).sum() / spec.sum()


def test_zero_input_gives_zero_output():
    y = virtual_amp_process(VirtualAmpConfig(volume=1, bass=1, treble=1), np.zeros(1000, np.float32))
    assert np.all(y == 0)


def test_output_is_float32_and_same_length():
    y = virtual_amp_process(VirtualAmpConfig(), noise(123))
    assert y.dtype == np.float32 and y.shape == (123,)


def test_master_zero_is_attenuated_floor():
    x = noise()
    loud = virtual_amp_process(VirtualAmpConfig(master=1.0), x).astype(np.float64)
    quiet = virtual_amp_process(VirtualAmpConfig(master=0.0), x).astype(np.float64)
    np.testing.assert_allclose(quiet, knob_maps(VirtualAmpConfig(master=0.0))["scale"] * loud, rtol=1e-5, atol=1e-8)
    assert knob_maps(VirtualAmpConfig(master=0.0))["scale"] < knob_maps(VirtualAmpConfig(master=0.5))["scale"]


def test_small_signal_low_gain_is_nearly_linear():
    n = 8000
    k = 125  # bin-aligned tone at 125 Hz
    x = (0.01 * np.sin(2 * np.pi * k * np.arange(2 * n) / n)).astype(np.float32)
    cfg = VirtualAmpConfig(volume=0.0, bass=0.5, treble=0.5, tone_cut=0.0, master=1.0)
    y = virtual_amp_process(cfg, x)[n:].astype(np.float64)
    spec = np.abs(np.fft.rfft(y))
    fundamental = spec[k]
    harmonics = np.sqrt(sum(spec[m * k] ** 2 for m in range(2, 8)))
    assert harmonics / fundamental < 1e-3


def test_small_signal_220hz_thd():
    n = FS  # one-second window puts 220 Hz exactly on a bin
    x = (1e-3 * np.sin(2 * np.pi * 220 * np.arange(2 * n) / FS)).astype(np.float32)
    y = virtual_amp_process(VirtualAmpConfig(volume=0.1), x)[n:].astype(np.float64)
    spec = np.abs(np.fft.rfft(y))
    harmonics = np.sqrt(sum(spec[m * 220] ** 2 for m in range(2, 19)))
    assert harmonics / spec[220] < 1e-3


def test_volume_adds_harmonics():
    n = 8000
    x = (0.5 * np.sin(2 * np.pi * 125 * np.arange(n) / n)).astype(np.float32)

    def thd(v):
        s = np.abs(np.fft.rfft(virtual_amp_process(VirtualAmpConfig(volume=v, tone_cut=0.0), x)))
        return np.sqrt(sum(s[m * 125] ** 2 for m in range(2, 8))) / s[125]

    assert thd(1.0) > thd(0.5) > thd(0.0)


def test_tone_cut_centroid_monotone():
    x = noise(16000)
    cs = [centroid(virtual_amp_process(VirtualAmpConfig(volume=0.0, tone_cut=t), x)) for t in np.linspace(0, 1, 6)]
    assert all(a > b for a, b in zip(cs, cs[1:]))


def test_bass_and_treble_shape_their_bands():
    x = noise(16000, scale=0.05)
    lo = [band_energy(virtual_amp_process(VirtualAmpConfig(volume=0.0, bass=b, tone_cut=0.0), x), 20, 150)
          for b in (0.0, 0.5, 1.0)]
    hi = [band_energy(virtual_amp_process(VirtualAmpConfig(volume=0.0, treble=t, tone_cut=0.0), x), 2500, 3200)
          for t in (0.0, 0.5, 1.0)]
    assert lo[0] < lo[1] < lo[2]
    assert hi[0] < hi[1] < hi[2]


@pytest.mark.parametrize("knob", AMP_CONTROLS)
def test_every_knob_is_identifiable(knob):
    x = noise()
    base = virtual_amp_process(VirtualAmpConfig(), x)
    moved = virtual_amp_process(VirtualAmpConfig(**{knob: 0.6}), x)
    assert np.max(np.abs(base - moved)) > 1e-4


def test_block_processing_matches_one_shot():
    x = noise(5000)
    cfg = VirtualAmpConfig(volume=0.8, bass=0.2)
    amp = VirtualAmp(cfg)
    parts = np.concatenate([amp.process(x[i:i + 333]) for i in range(0, len(x), 333)])
    np.testing.assert_allclose(parts, virtual_amp_process(cfg, x), rtol=1e-6, atol=1e-7)


def test_config_validation():
    with pytest.raises(ValueError):
        VirtualAmpConfig(volume=1.2)
    with pytest.raises(ValueError):
        VirtualAmpConfig.from_controls(["drive"], [0.5], FS)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=5, max_size=5))
def test_output_bounded_for_any_setting(knobs):
    cfg = VirtualAmpConfig(*knobs)
    y = virtual_amp_process(cfg, noise(2000, scale=1.0))
    assert np.all(np.isfinite(y))
    # tanh bounds the shaper; shelves add at most +9 dB on top
    assert np.max(np.abs(y)) < 16.0


def test_corpus_generation_deterministic():
    a = generate_corpus(FS, n_clips=6, clip_seconds=1.0, seed=3)
    b = generate_corpus(FS, n_clips=6, clip_seconds=1.0, seed=3)
    assert all(np.array_equal(x, y) for x, y in zip(a.clips, b.clips))
    assert all(np.max(np.abs(c)) <= 1.0 for c in a.clips)


def _session(n=12, seed=0):
    specs = amp_control_space()
    return plan_session(specs, sample_configs(specs, n, seed))[0]


def test_capture_deterministic_and_consistent(tmp_path):
    corpus = generate_corpus(FS, n_clips=6, clip_seconds=1.0, seed=1)
    a = capture_session(_session(), corpus, 2000, seed=5, manifest_path=tmp_path / "m.jsonl")
    b = capture_session(_session(), corpus, 2000, seed=5)
    assert len(a.examples) == 12
    for ea, eb in zip(a.examples, b.examples):
        assert np.array_equal(ea.input, eb.input) and np.array_equal(ea.target, eb.target)
        assert np.array_equal(reprocess(a, ea), ea.target)
    assert (tmp_path / "m.jsonl").exists()


def test_capture_skips_short_clips(caplog):
    short = np.zeros(100, np.float32)
    long = noise(4000, scale=0.1).clip(-1, 1)
    corpus = ExcitationCorpus([short, long], FS, ["short", "long"])
    with caplog.at_level(logging.WARNING):
        ds = capture_session(_session(3), corpus, 2000, seed=0)
    assert "short" in caplog.text
    assert all(len(e.input) == 2000 for e in ds.examples)


def test_capture_with_no_usable_clip():
    corpus = ExcitationCorpus([np.zeros(10, np.float32)], FS, ["tiny"])
    with pytest.raises(ValueError):
        capture_session(_session(2), corpus, 2000, seed=0)


def test_corpus_rejects_clipping():
    with pytest.raises(ValueError):
        ExcitationCorpus([np.full(10, 1.5, np.float32)], FS)

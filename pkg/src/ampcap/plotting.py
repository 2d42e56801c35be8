"""Report figures. Everything renders off-screen to files."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_tour(configs: np.ndarray, ordered: np.ndarray, path, seed: int = 0) -> Path:
    """Random visiting order next to the planned order, first two controls only."""
    rng = np.random.default_rng(seed)
    home = np.zeros((1, 2))
    shuffled = np.vstack([home, configs[rng.permutation(len(configs)), :2], home])
    planned = np.vstack([home, ordered[:, :2], home])
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(7, 3.4), sharey=True)
        for ax, path_pts, title in ((axes[0], shuffled, "random order"), (axes[1], planned, "planned order")):
            length = np.abs(np.diff(path_pts, axis=0)).sum()
            ax.plot(path_pts[:, 0], path_pts[:, 1], lw=0.6, color="0.35")
            ax.plot(configs[:, 0], configs[:, 1], ".", ms=3, color="C0")
            ax.set_title(f"{title} (L1 travel {length:.1f})")
            ax.set_xlim(-0.02, 1.02)
            ax.set_ylim(-0.02, 1.02)
            ax.set_aspect("equal")
        axes[0].set_ylabel("control 2")
        for ax in axes:
            ax.set_xlabel("control 1")
        return _save(fig, path)


def plot_training(train_loss, validation, path, window: int = 100) -> Path:
    loss = np.asarray(train_loss, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 3.2))
        it = np.arange(1, len(loss) + 1)
        ax.semilogy(it, loss, lw=0.4, color="0.7", label="train (per batch)")
        if len(loss) >= window:
            smooth = np.convolve(loss, np.ones(window) / window, mode="valid")
            ax.semilogy(it[window - 1:], smooth, lw=1.0, color="C0", label=f"train ({window}-batch mean)")
        if validation:
            vi, ve = zip(*validation)
            ax.semilogy(vi, ve, "o-", ms=3, color="C3", label="validation mean ESR")
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        ax.legend()
        return _save(fig, path)


def _spectrum_db(x, sample_rate):
    win = np.hanning(len(x))
    mag = np.abs(np.fft.rfft(x * win)) / (np.sum(win) / 2)
    return np.fft.rfftfreq(len(x), 1.0 / sample_rate), 20 * np.log10(mag + 1e-9)


def plot_model_vs_reference(model_out, reference, sample_rate, path, title: str = "") -> Path:
    """Time-domain excerpt and magnitude spectrum of model output over the reference."""
    t = np.arange(len(reference)) / sample_rate
    with plt.rc_context(STYLE):
        fig, (ax_t, ax_f) = plt.subplots(1, 2, figsize=(8, 3))
        n = min(len(reference), int(0.05 * sample_rate))
        mid = max(0, len(reference) // 2 - n // 2)
        sl = slice(mid, mid + n)
        ax_t.plot(t[sl], reference[sl], color="k", lw=1.0, label="reference")
        ax_t.plot(t[sl], model_out[sl], color="C0", lw=0.8, label="model")
        ax_t.set_xlabel("time (s)")
        ax_t.legend()
        for sig, color in ((reference, "k"), (model_out, "C0")):
            f, db = _spectrum_db(np.asarray(sig, dtype=float), sample_rate)
            ax_f.semilogx(f[1:], db[1:], color=color, lw=0.7)
        ax_f.set_xlabel("frequency (Hz)")
        ax_f.set_ylabel("magnitude (dB)")
        if title:
            fig.suptitle(title)
        return _save(fig, path)


def plot_control_family(outputs: dict[float, np.ndarray], sample_rate, path, control: str = "tone_cut") -> Path:
    """Spectra of one signal rendered at several settings of a single control."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3.2))
        cmap = plt.get_cmap("viridis")
        for i, (value, y) in enumerate(sorted(outputs.items())):
            f, db = _spectrum_db(np.asarray(y, dtype=float), sample_rate)
            ax.semilogx(f[1:], db[1:], lw=0.8, color=cmap(i / max(1, len(outputs) - 1)),
                        label=f"{control}={value:.2f}")
        ax.set_xlabel("frequency (Hz)")
        ax.set_ylabel("magnitude (dB)")
        ax.legend()
        return _save(fig, path)


def plot_esr_table(table, path, top: int = 30) -> Path:
    rows = table[:top]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 0.18 * len(rows) + 1))
        ax.barh([r[0] for r in rows][::-1], [r[1] for r in rows][::-1], color="C3")
        ax.set_xlabel("ESR")
        ax.set_title("worst validation examples")
        return _save(fig, path)

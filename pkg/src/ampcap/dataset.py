"""Conditioned (input, target, controls) training triples and their on-disk manifest.

Manifest layout (JSON lines, UTF-8). The first line is a header object::

    {"format": "ampcap-manifest", "version": 1, "sample_rate": 8000,
     "segment_length": 4000, "controls": [{"name": "volume", "kind": "continuous"}, ...]}

Each following line is one example::

    {"id": "ex00000", "input": "audio/ex00000_in.wav", "target": "audio/ex00000_out.wav",
     "controls": [0.25, ...], "split": "train" | "val" | null}

Audio paths are relative to the manifest's directory. Control values are written
with ``repr`` precision so they round-trip exactly.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from .audio import read_wav, write_wav
from .controls import ControlSpec, validate_controls

MANIFEST_FORMAT = "ampcap-manifest"
MANIFEST_VERSION = 1
TRAIN, VAL = "train", "val"


class DatasetError(ValueError):
    pass


@dataclass
class ExampleTriple:
    id: str
    input: np.ndarray
    target: np.ndarray
    controls: np.ndarray
    split: str | None = None


@dataclass
class Dataset:
    sample_rate: int
    segment_length: int
    controls: list[ControlSpec]
    examples: list[ExampleTriple] = field(default_factory=list)

    @property
    def control_names(self) -> list[str]:
        return [c.name for c in self.controls]

    def __len__(self) -> int:
        return len(self.examples)

    def split(self, name: str) -> list[ExampleTriple]:
        return [e for e in self.examples if e.split == name]

    @property
    def train(self) -> list[ExampleTriple]:
        return self.split(TRAIN)

    @property
    def val(self) -> list[ExampleTriple]:
        return self.split(VAL)

    def validate(self) -> None:
        seen = set()
        for e in self.examples:
            if e.id in seen:
                raise DatasetError(f"duplicate example id {e.id!r}")
            seen.add(e.id)
            for label, arr in (("input", e.input), ("target", e.target)):
                if arr.shape != (self.segment_length,):
                    raise DatasetError(
                        f"example {e.id}: {label} has {arr.shape[0] if arr.ndim else 0} samples, "
                        f"manifest declares {self.segment_length}"
                    )
            e.controls = validate_controls(e.controls, self.controls, where=f"example {e.id}")
            if e.split not in (None, TRAIN, VAL):
                raise DatasetError(f"example {e.id}: unknown split {e.split!r}")


def write_manifest(dataset: Dataset, path, audio_dir: str = "audio") -> Path:
    """Write the manifest and any audio files to ``path``'s directory."""
    dataset.validate()
    path = Path(path)
    root = path.parent
    root.mkdir(parents=True, exist_ok=True)
    header = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "sample_rate": dataset.sample_rate,
        "segment_length": dataset.segment_length,
        "controls": [c.to_dict() for c in dataset.controls],
    }
    lines = [json.dumps(header)]
    for e in dataset.examples:
        in_rel = f"{audio_dir}/{e.id}_in.wav"
        out_rel = f"{audio_dir}/{e.id}_out.wav"
        write_wav(root / in_rel, e.input, dataset.sample_rate)
        write_wav(root / out_rel, e.target, dataset.sample_rate)
        lines.append(json.dumps({
            "id": e.id,
            "input": in_rel,
            "target": out_rel,
            "controls": [float(v) for v in e.controls],
            "split": e.split,
        }))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_manifest(path) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"manifest not found: {path}")
    root = path.parent
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise DatasetError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    if header.get("format") != MANIFEST_FORMAT:
        raise DatasetError(f"{path}: not an {MANIFEST_FORMAT} file")
    if header.get("version") != MANIFEST_VERSION:
        raise DatasetError(f"{path}: unsupported manifest version {header.get('version')!r}")
    ds = Dataset(
        int(header["sample_rate"]),
        int(header["segment_length"]),
        [ControlSpec.from_dict(c) for c in header["controls"]],
    )
    for lineno, line in enumerate(lines[1:], start=2):
        rec = json.loads(line)
        audio = {}
        for label in ("input", "target"):
            f = root / rec[label]
            if not f.exists():
                raise DatasetError(f"{path}:{lineno}: missing audio file {f}")
            samples, rate = read_wav(f)
            if rate != ds.sample_rate:
                raise DatasetError(f"{f}: sample rate {rate} != manifest rate {ds.sample_rate}")
            if samples.shape[0] != ds.segment_length:
                raise DatasetError(f"{f}: {samples.shape[0]} samples, manifest declares {ds.segment_length}")
            audio[label] = samples
        try:
            controls = validate_controls(rec["controls"], ds.controls, where=f"example {rec['id']}")
        except ValueError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}") from None
        ds.examples.append(ExampleTriple(rec["id"], audio["input"], audio["target"], controls, rec.get("split")))
    ds.validate()
    return ds


def random_split(dataset: Dataset, train_count: int, val_count: int, seed: int) -> Dataset:
    """Assign a seeded random train/validation partition; leftovers get no split."""
    n = len(dataset)
    if train_count < 0 or val_count < 0 or train_count + val_count > n:
        raise DatasetError(f"cannot split {n} examples into {train_count} train + {val_count} val")
    order = np.random.default_rng(seed).permutation(n)
    labels = [None] * n
    for i in order[:train_count]:
        labels[i] = TRAIN
    for i in order[train_count:train_count + val_count]:
        labels[i] = VAL
    examples = [replace(e, split=s) for e, s in zip(dataset.examples, labels)]
    return replace(dataset, examples=examples)


@dataclass
class Batch:
    ids: list[str]
    inputs: np.ndarray  # [B, S]
    targets: np.ndarray  # [B, S]
    controls: np.ndarray  # [B, K]


def minibatch_iter(dataset: Dataset, batch_size: int, seed: int, epochs: int | None = None,
                   split: str = TRAIN) -> Iterator[Batch]:
    """Yield shuffled minibatches, one seeded permutation per epoch; runs forever if ``epochs`` is None."""
    if batch_size < 1:
        raise DatasetError("batch_size must be >= 1")
    pool = dataset.split(split)
    if not pool:
        raise DatasetError(f"the {split!r} split is empty")
    rng = np.random.default_rng(seed)
    epoch = 0
    while epochs is None or epoch < epochs:
        order = rng.permutation(len(pool))
        for start in range(0, len(pool), batch_size):
            chosen = [pool[i] for i in order[start:start + batch_size]]
            yield Batch(
                [e.id for e in chosen],
                np.stack([e.input for e in chosen]),
                np.stack([e.target for e in chosen]),
                np.stack([e.controls for e in chosen]) if chosen[0].controls.size else
                np.zeros((len(chosen), 0)),
            )
        epoch += 1


def condition_concat(segment: np.ndarray, controls: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Per-timestep network input: the audio sample followed by the K control values.

    ``segment`` may be [S] (returns [S, 1+K]) or batched [B, S] with controls [B, K].
    """
    x = np.asarray(segment)
    c = np.asarray(controls, dtype=dtype)
    if x.ndim == 1:
        out = np.empty((x.shape[0], 1 + c.shape[0]), dtype)
        out[:, 0] = x
        out[:, 1:] = c
        return out
    out = np.empty((x.shape[0], x.shape[1], 1 + c.shape[1]), dtype)
    out[:, :, 0] = x
    out[:, :, 1:] = c[:, None, :]
    return out

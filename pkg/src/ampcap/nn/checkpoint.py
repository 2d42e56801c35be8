"""Versioned model checkpoints.

A checkpoint is a numpy ``.npz`` archive. Every parameter array is stored
little-endian float32 (``<f4``) in C order under the keys listed in
``PARAM_KEYS``. The key ``meta`` holds a UTF-8 JSON document (as a uint8 array)
with the fields::

    format        "ampcap-checkpoint"
    version       integer, currently 1
    hidden_size   H
    input_size    D = 1 + K
    control_names list of K strings
    sample_rate   Hz the model was trained at
    warmup        samples excluded from the loss during training
    extra         free-form dict (training summary etc.)
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lstm import DenseParams, LstmParams

FORMAT = "ampcap-checkpoint"
VERSION = 1
PARAM_KEYS = ("lstm.input_weights", "lstm.recurrent_weights", "lstm.biases", "head.weights", "head.bias")
BYTE_ORDER = "<f4"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    lstm: LstmParams
    head: DenseParams
    control_names: list[str]
    sample_rate: int
    warmup: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def hidden_size(self) -> int:
        return self.lstm.hidden_size

    @property
    def input_size(self) -> int:
        return self.lstm.input_size

    def __post_init__(self):
        if self.lstm.input_size != 1 + len(self.control_names):
            raise CheckpointError(
                f"model input size {self.lstm.input_size} != 1 + {len(self.control_names)} controls"
            )

    @classmethod
    def fresh(cls, hidden_size, control_names, sample_rate, rng, warmup=0, dtype=np.float32):
        d = 1 + len(control_names)
        return cls(LstmParams.init(hidden_size, d, rng, dtype), DenseParams.init(hidden_size, rng, dtype),
                   list(control_names), int(sample_rate), warmup)

    @classmethod
    def zeros(cls, hidden_size, control_names, sample_rate, dtype=np.float32):
        d = 1 + len(control_names)
        return cls(LstmParams.zeros(hidden_size, d, dtype), DenseParams.zeros(hidden_size, dtype),
                   list(control_names), int(sample_rate))

    def param_dict(self) -> dict[str, np.ndarray]:
        return {
            "lstm.input_weights": self.lstm.input_weights,
            "lstm.recurrent_weights": self.lstm.recurrent_weights,
            "lstm.biases": self.lstm.biases,
            "head.weights": self.head.weights,
            "head.bias": self.head.bias,
        }

    def with_params(self, params: dict[str, np.ndarray]) -> "Checkpoint":
        return Checkpoint(
            LstmParams(params["lstm.input_weights"], params["lstm.recurrent_weights"], params["lstm.biases"]),
            DenseParams(params["head.weights"], params["head.bias"]),
            list(self.control_names), self.sample_rate, self.warmup, dict(self.extra),
        )

    def meta(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "hidden_size": self.hidden_size,
            "input_size": self.input_size,
            "control_names": list(self.control_names),
            "sample_rate": self.sample_rate,
            "warmup": self.warmup,
            "extra": self.extra,
        }


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {k: np.ascontiguousarray(v, dtype=BYTE_ORDER) for k, v in ckpt.param_dict().items()}
    meta = np.frombuffer(json.dumps(ckpt.meta()).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, meta=meta, **arrays)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: not a readable checkpoint ({exc})") from exc
    with archive:
        if "meta" not in archive.files:
            raise CheckpointError(f"{path}: missing metadata")
        meta = json.loads(archive["meta"].tobytes().decode("utf-8"))
        if meta.get("format") != FORMAT:
            raise CheckpointError(f"{path}: unknown format {meta.get('format')!r}")
        if meta.get("version") != VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
        missing = [k for k in PARAM_KEYS if k not in archive.files]
        if missing:
            raise CheckpointError(f"{path}: missing arrays {missing}")
        arrays = {k: archive[k].astype(np.float32) for k in PARAM_KEYS}
    ckpt = Checkpoint(
        LstmParams(arrays["lstm.input_weights"], arrays["lstm.recurrent_weights"], arrays["lstm.biases"]),
        DenseParams(arrays["head.weights"], arrays["head.bias"]),
        list(meta["control_names"]), int(meta["sample_rate"]), int(meta.get("warmup", 0)),
        dict(meta.get("extra", {})),
    )
    if ckpt.hidden_size != meta["hidden_size"] or ckpt.input_size != meta["input_size"]:
        raise CheckpointError(f"{path}: array shapes disagree with the architecture descriptor")
    return ckpt

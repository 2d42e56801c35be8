"""Control-surface descriptions shared by planning, capture and training."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CONTINUOUS = "continuous"
DISCRETE = "discrete"

# the modeled amplifier's five knobs, in conditioning-vector order
AMP_CONTROLS = ("volume", "bass", "treble", "tone_cut", "master")


@dataclass(frozen=True)
class ControlSpec:
    name: str
    kind: str = CONTINUOUS
    levels: int | None = None  # switch positions for discrete controls

    def __post_init__(self):
        if not self.name:
            raise ValueError("control name must be nonempty")
        if self.kind not in (CONTINUOUS, DISCRETE):
            raise ValueError(f"control {self.name!r}: unknown kind {self.kind!r}")
        if self.kind == DISCRETE and (self.levels is None or self.levels < 2):
            raise ValueError(f"control {self.name!r}: a discrete control needs at least 2 levels")

    def quantize(self, value: float) -> float:
        """Snap a normalized value to the nearest switch level (identity for knobs)."""
        if self.kind == CONTINUOUS:
            return float(value)
        m = self.levels - 1
        return round(float(value) * m) / m

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.kind == DISCRETE:
            d["levels"] = self.levels
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ControlSpec":
        return cls(d["name"], d.get("kind", CONTINUOUS), d.get("levels"))


def parse_control_space(text: str) -> list[ControlSpec]:
    """Parse ``"volume,bass,switch:3"``-style specs; ``name:m`` is an m-position switch."""
    specs = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            raise ValueError(f"empty control name in {text!r}")
        if ":" in item:
            name, levels = item.split(":", 1)
            try:
                m = int(levels)
            except ValueError:
                raise ValueError(f"bad level count in {item!r}") from None
            specs.append(ControlSpec(name.strip(), DISCRETE, m))
        else:
            specs.append(ControlSpec(item))
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate control names in {text!r}")
    return specs


def amp_control_space() -> list[ControlSpec]:
    return [ControlSpec(n) for n in AMP_CONTROLS]


def validate_controls(values, specs: list[ControlSpec], where: str = "") -> np.ndarray:
    """Check a control vector against its specs; returns it as float64."""
    v = np.asarray(values, dtype=np.float64)
    prefix = f"{where}: " if where else ""
    if v.shape != (len(specs),):
        raise ValueError(f"{prefix}expected {len(specs)} control values, got shape {v.shape}")
    for x, spec in zip(v, specs):
        if not np.isfinite(x) or x < 0.0 or x > 1.0:
            raise ValueError(f"{prefix}control {spec.name!r} value {x!r} outside [0, 1]")
        if spec.kind == DISCRETE and abs(spec.quantize(x) - x) > 1e-9:
            raise ValueError(f"{prefix}control {spec.name!r} value {x!r} is not one of its {spec.levels} levels")
    return v

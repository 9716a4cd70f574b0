"""Core waveform container and label enums."""
from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ParameterError


class FaultClass(enum.IntEnum):
    Healthy = 0
    OuterRace = 1
    InnerRace = 2
    RollingElement = 3

    @classmethod
    def parse(cls, value) -> "FaultClass":
        """Accept an enum member, an int, or a (case-insensitive) name/alias."""
        if isinstance(value, cls):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().lower().replace("-", "").replace("_", "")
        try:
            return _ALIASES[key]
        except KeyError:
            raise ParameterError(f"unknown fault class {value!r}") from None


_ALIASES = {
    "healthy": FaultClass.Healthy,
    "normal": FaultClass.Healthy,
    "h": FaultClass.Healthy,
    "outerrace": FaultClass.OuterRace,
    "outer": FaultClass.OuterRace,
    "of": FaultClass.OuterRace,
    "innerrace": FaultClass.InnerRace,
    "inner": FaultClass.InnerRace,
    "if": FaultClass.InnerRace,
    "rollingelement": FaultClass.RollingElement,
    "ball": FaultClass.RollingElement,
    "ref": FaultClass.RollingElement,
}


class DomainTag(str, enum.Enum):
    SyntheticSource = "synthetic_source"
    RealTarget = "real_target"


@dataclass(frozen=True)
class Segment:
    """A vibration waveform.

    ``shaft_speed`` is in RPM, ``sample_rate`` in Hz.
    """

    samples: np.ndarray
    sample_rate: float
    shaft_speed: float
    label: Optional[FaultClass] = None
    domain_tag: DomainTag = DomainTag.RealTarget

    def __post_init__(self):
        samples = np.asarray(self.samples)
        if samples.ndim != 1 or samples.size == 0:
            raise ParameterError("samples must be a non-empty 1-D array")
        if not self.sample_rate > 0:
            raise ParameterError(f"sample_rate must be positive, got {self.sample_rate}")
        if not self.shaft_speed > 0:
            raise ParameterError(f"shaft_speed must be positive, got {self.shaft_speed}")
        object.__setattr__(self, "samples", samples)
        if self.label is not None:
            object.__setattr__(self, "label", FaultClass.parse(self.label))

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def shaft_hz(self) -> float:
        return self.shaft_speed / 60.0

    def with_samples(self, samples: np.ndarray, **changes) -> "Segment":
        return replace(self, samples=samples, **changes)

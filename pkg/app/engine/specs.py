"""
Sampling patterns and exogenous signals as the engine sees them

Plain frozen dataclasses; the request documents in app.models.schemas are
converted to these in app.commands.
"""

from dataclasses import dataclass
from typing import ClassVar, Optional, Tuple, Union

from app.core.errors import InvalidInputError


def _positive(name: str, value: float) -> float:
    if not value > 0:
        raise InvalidInputError(f"{name} must be positive, got {value!r}")
    return float(value)


# Sampling patterns


@dataclass(frozen=True)
class UniformPattern:
    kind: ClassVar[str] = "uniform"
    h: float

    def __post_init__(self):
        object.__setattr__(self, "h", _positive("h", self.h))


@dataclass(frozen=True)
class PeriodicPattern:
    kind: ClassVar[str] = "periodic"
    intervals: Tuple[float, ...]

    def __post_init__(self):
        if len(self.intervals) == 0:
            raise InvalidInputError("a periodic pattern needs at least one interval")
        object.__setattr__(self, "intervals", tuple(_positive("interval", h) for h in self.intervals))


@dataclass(frozen=True)
class ExplicitPattern:
    kind: ClassVar[str] = "explicit"
    instants: Tuple[float, ...]

    def __post_init__(self):
        instants = tuple(float(t) for t in self.instants)
        if len(instants) < 2 or instants[0] != 0.0:
            raise InvalidInputError("explicit instants start at 0 and have at least two entries")
        if any(b <= a for a, b in zip(instants, instants[1:])):
            raise InvalidInputError("sampling instants must be strictly increasing")
        object.__setattr__(self, "instants", instants)


@dataclass(frozen=True)
class RandomPattern:
    """Intervals drawn uniformly from [h_min, h_max]"""

    kind: ClassVar[str] = "random"
    h_min: float
    h_max: float
    seed: int = 0

    def __post_init__(self):
        _positive("h_min", self.h_min)
        if self.h_min > self.h_max:
            raise InvalidInputError("h_min must not exceed h_max")


@dataclass(frozen=True)
class EventPattern:
    kind: ClassVar[str] = "event"
    epsilon: float
    h_max: float

    def __post_init__(self):
        _positive("epsilon", self.epsilon)
        _positive("h_max", self.h_max)


Pattern = Union[UniformPattern, PeriodicPattern, ExplicitPattern, RandomPattern, EventPattern]


# Exogenous signals; channel None drives every disturbance channel


@dataclass(frozen=True)
class Impulse:
    kind: ClassVar[str] = "impulse"
    channel: int = 0
    t0: float = 0.0


@dataclass(frozen=True)
class Step:
    kind: ClassVar[str] = "step"
    amplitude: float = 1.0
    channel: Optional[int] = None


@dataclass(frozen=True)
class Square:
    kind: ClassVar[str] = "square"
    period: float
    amplitude: float = 1.0
    channel: Optional[int] = None

    def __post_init__(self):
        _positive("period", self.period)


@dataclass(frozen=True)
class Sine:
    kind: ClassVar[str] = "sine"
    frequency: float
    amplitude: float = 1.0
    channel: Optional[int] = None


@dataclass(frozen=True)
class Noise:
    kind: ClassVar[str] = "noise"
    seed: int = 0
    sigma: float = 1.0


@dataclass(frozen=True)
class Samples:
    """CSV file with a header row and columns t, w1, w2, ..."""

    kind: ClassVar[str] = "samples"
    path: str


Signal = Union[Impulse, Step, Square, Sine, Noise, Samples]

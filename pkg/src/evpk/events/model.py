"""Event data model.

Streams are held column-wise (``x``, ``y``, ``t``, ``p`` numpy arrays) so
that windows and representations stay vectorized; ``Event`` is the
single-record view used at API edges and in tests.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class EventOrderError(ValueError):
    pass


class Event(NamedTuple):
    x: int
    y: int
    t: int  # microseconds
    p: int  # +1 / -1


@dataclass(frozen=True)
class SensorGeometry:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"sensor geometry must be at least 1x1, got {self.width}x{self.height}")


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True).reshape(-1)
    a.setflags(write=False)
    return a


class EventStream:
    """Time-ordered events over a sensor."""

    __slots__ = ("x", "y", "t", "p", "geometry")

    def __init__(self, x, y, t, p, geometry, check=True):
        self.x = _frozen(x, np.int64)
        self.y = _frozen(y, np.int64)
        self.t = _frozen(t, np.int64)
        self.p = _frozen(p, np.int8)
        self.geometry = geometry
        if check:
            self.validate()

    @classmethod
    def empty(cls, geometry):
        return cls([], [], [], [], geometry)

    @classmethod
    def from_events(cls, events, geometry):
        events = list(events)
        if not events:
            return cls.empty(geometry)
        x, y, t, p = zip(*events)
        return cls(x, y, t, p, geometry)

    def validate(self):
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise ValueError("event columns have different lengths")
        g = self.geometry
        if n == 0:
            return
        bad = np.flatnonzero((self.x < 0) | (self.x >= g.width) | (self.y < 0) | (self.y >= g.height))
        if len(bad):
            i = bad[0]
            raise ValueError(f"event {i} at ({self.x[i]}, {self.y[i]}) outside {g.width}x{g.height} sensor")
        bad = np.flatnonzero((self.p != 1) & (self.p != -1))
        if len(bad):
            raise ValueError(f"event {bad[0]} has polarity {self.p[bad[0]]}, expected +1 or -1")
        if self.t[0] < 0:
            raise ValueError("negative timestamp")
        dec = np.flatnonzero(np.diff(self.t) < 0)
        if len(dec):
            raise EventOrderError(f"timestamps decrease at event {dec[0] + 1}")

    def __len__(self):
        return len(self.t)

    def __iter__(self):
        for x, y, t, p in zip(self.x.tolist(), self.y.tolist(), self.t.tolist(), self.p.tolist()):
            yield Event(x, y, t, p)

    def __getitem__(self, index):
        if isinstance(index, (int, np.integer)):
            return Event(int(self.x[index]), int(self.y[index]), int(self.t[index]), int(self.p[index]))
        return EventStream(self.x[index], self.y[index], self.t[index], self.p[index],
                           self.geometry, check=False)

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (self.geometry == other.geometry
                and np.array_equal(self.x, other.x) and np.array_equal(self.y, other.y)
                and np.array_equal(self.t, other.t) and np.array_equal(self.p, other.p))

    def __repr__(self):
        g = self.geometry
        return f"EventStream(n={len(self)}, {g.width}x{g.height})"

    def polarity(self, sign):
        return self[self.p == sign]


@dataclass(frozen=True, eq=False)
class EventWindow:
    """Events with ``t_start <= t < t_end``."""

    events: EventStream
    t_start: int
    t_end: int

    def __post_init__(self):
        if self.t_end <= self.t_start:
            raise ValueError(f"empty window interval [{self.t_start}, {self.t_end})")
        t = self.events.t
        if len(t) and (t[0] < self.t_start or t[-1] >= self.t_end):
            raise ValueError(f"events fall outside window [{self.t_start}, {self.t_end})")

    @property
    def geometry(self):
        return self.events.geometry

    @property
    def duration(self):
        return self.t_end - self.t_start

    def __len__(self):
        return len(self.events)

    def with_events(self, events):
        return EventWindow(events, self.t_start, self.t_end)


@dataclass(frozen=True)
class MovingBox:
    """Axis-aligned rectangle translating at constant velocity.

    ``stops`` lists ``(t0, t1)`` microsecond intervals during which the box
    holds still; displacement only accrues outside them.
    """

    x: float
    y: float
    width: int
    height: int
    vx: float  # px / s
    vy: float  # px / s
    contrast: int = 1
    class_id: int = 0
    stops: tuple = ()

    def moving_time(self, t_us):
        """Microseconds of motion accumulated by time ``t_us``."""
        paused = 0
        for t0, t1 in self.stops:
            paused += max(0, min(t_us, t1) - t0) if t_us > t0 else 0
        return t_us - paused

    def position(self, t_us):
        s = self.moving_time(t_us) * 1e-6
        return self.x + self.vx * s, self.y + self.vy * s


@dataclass(frozen=True)
class SceneSpec:
    geometry: SensorGeometry
    boxes: tuple
    duration: int  # microseconds
    threshold: float = 0.2
    noise_rate: float = 0.0  # events / pixel / s
    seed: int = 0

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError(f"contrast threshold must be positive, got {self.threshold}")
        g = self.geometry
        for b in self.boxes:
            if b.x < 0 or b.y < 0 or b.x + b.width > g.width or b.y + b.height > g.height:
                raise ValueError(f"box {b} does not start inside the {g.width}x{g.height} sensor")
            if b.contrast not in (1, -1):
                raise ValueError(f"box contrast must be +1 or -1, got {b.contrast}")


@dataclass(frozen=True)
class GroundTruthBox:
    window: int
    class_id: int
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min >= self.x_max or self.y_min >= self.y_max:
            raise ValueError(f"degenerate ground-truth box {self}")

    @property
    def box(self):
        return (self.x_min, self.y_min, self.x_max, self.y_max)

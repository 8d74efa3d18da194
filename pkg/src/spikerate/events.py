"""
Discrete-time spike representation.

A spike is an instantaneous event with a real, non-negative strength.  Time is
cut into half-open bins of width ``tau``; all spikes a neuron emits inside one
bin are summed into a single strength, and their position inside the bin is
forgotten.  A :class:`HistoryWindow` keeps the most recent ``K`` binned frames of
one layer, which is everything a delayed weight tensor with ``K`` delay slots
can see.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import BoundsError, GapError, InsufficientHistoryError, NumericError, OrderingError

US_PER_MS = 1_000
DEFAULT_TAU_US = 30 * US_PER_MS

SensorAddress = tuple  # (x, y, polarity)
Source = Union[int, SensorAddress]


@dataclass(frozen=True)
class Event:
    """One spike.

    ``source`` is either a neuron index or a sensor address ``(x, y, polarity)``
    with polarity 1 for ON and 0 for OFF.
    """

    source: Source
    timestamp: int
    strength: float = 1.0

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"timestamp must be >= 0, got {self.timestamp}")
        if not self.strength >= 0:
            raise ValueError(f"strength must be >= 0, got {self.strength}")

    @property
    def is_sensor(self) -> bool:
        return isinstance(self.source, tuple)

    @property
    def x(self) -> int:
        return self.source[0]

    @property
    def y(self) -> int:
        return self.source[1]

    @property
    def polarity(self) -> int:
        return self.source[2]


def sensor_event(x: int, y: int, t_us: int, polarity: int) -> Event:
    return Event((int(x), int(y), int(polarity)), int(t_us))


@dataclass(frozen=True)
class TimestepFrame:
    """Spike strengths of one layer during one timestep."""

    layer_id: str
    t: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1:
            raise BoundsError(f"frame values must be 1-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NumericError(f"non-finite value in frame {self.layer_id}@{self.t}")
        if np.any(values < 0):
            raise ValueError(f"negative spike strength in frame {self.layer_id}@{self.t}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zeros(cls, layer_id: str, t: int, size: int) -> "TimestepFrame":
        return cls(layer_id, t, np.zeros(size))

    def __eq__(self, other):
        if not isinstance(other, TimestepFrame):
            return NotImplemented
        return (
            self.layer_id == other.layer_id
            and self.t == other.t
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


class HistoryWindow:
    """Ring of the last ``capacity`` frames of one layer, consecutive in t."""

    def __init__(self, capacity: int, size: int, layer_id: str = ""):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = int(capacity)
        self.size = int(size)
        self.layer_id = layer_id
        self._frames: deque[TimestepFrame] = deque(maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self._frames)

    def __repr__(self) -> str:
        ts = [f.t for f in self._frames]
        return f"HistoryWindow(layer={self.layer_id!r}, K={self.capacity}, t={ts})"

    @property
    def filled(self) -> bool:
        return len(self._frames) == self.capacity

    @property
    def frames(self) -> tuple[TimestepFrame, ...]:
        """Stored frames, oldest first."""
        return tuple(self._frames)

    @property
    def newest_t(self) -> int | None:
        return self._frames[-1].t if self._frames else None

    @property
    def oldest(self) -> TimestepFrame:
        return self._frames[0]

    def push(self, frame: TimestepFrame) -> "HistoryWindow":
        if frame.size != self.size:
            raise BoundsError(
                f"frame has {frame.size} values, window {self.layer_id!r} expects {self.size}"
            )
        newest = self.newest_t
        if newest is not None and frame.t != newest + 1:
            raise GapError(f"window {self.layer_id!r} holds t={newest}, cannot push t={frame.t}")
        self._frames.append(frame)
        return self

    def clear(self) -> None:
        self._frames.clear()

    def copy(self) -> "HistoryWindow":
        w = HistoryWindow(self.capacity, self.size, self.layer_id)
        w._frames.extend(self._frames)
        return w

    def as_array(self, *, newest_first: bool = True, pad: bool = False) -> np.ndarray:
        """Stack frames into a ``(size, K)`` array.

        With ``newest_first`` column ``k-1`` holds the frame at ``t-k+1``
        (the delay-``k`` input of a drive computation); otherwise column
        ``k-1`` holds the frame at ``t0+k-1`` counted from the oldest frame.
        ``pad`` fills missing (older) slots with zeros.
        """
        out = np.zeros((self.size, self.capacity))
        frames = list(self._frames)
        if not pad and len(frames) < self.capacity:
            raise InsufficientHistoryError(
                f"window {self.layer_id!r} holds {len(frames)} of {self.capacity} frames"
            )
        if newest_first:
            for k, f in enumerate(reversed(frames)):
                out[:, k] = f.values
        else:
            offset = self.capacity - len(frames)
            for k, f in enumerate(frames):
                out[:, offset + k] = f.values
        return out


def push_frame(window: HistoryWindow, frame: TimestepFrame) -> HistoryWindow:
    """Append ``frame`` to ``window``, evicting the oldest frame at capacity."""
    return window.push(frame)


def bin_events(
    events: Sequence[Event],
    tau_us: int,
    layer_size: int,
    t0_us: int = 0,
    layer_id: str = "input",
) -> list[TimestepFrame]:
    """Sum event strengths into frames of width ``tau_us`` starting at ``t0_us``.

    Frame ``b`` covers ``[t0_us + b*tau_us, t0_us + (b+1)*tau_us)``.  Frames are
    emitted up to and including the bin of the last event.
    """
    if tau_us <= 0:
        raise ValueError(f"tau_us must be positive, got {tau_us}")
    if not events:
        return []
    n = len(events)
    idx = np.empty(n, dtype=np.int64)
    ts = np.empty(n, dtype=np.int64)
    strength = np.empty(n)
    prev = None
    for e_i, ev in enumerate(events):
        if not isinstance(ev.source, (int, np.integer)):
            raise BoundsError(f"event {e_i} has unmapped source {ev.source!r}")
        if ev.source < 0 or ev.source >= layer_size:
            raise BoundsError(f"event {e_i}: neuron {ev.source} outside layer of size {layer_size}")
        if prev is not None and ev.timestamp < prev:
            raise OrderingError(f"event {e_i}: timestamp {ev.timestamp} after {prev}")
        if ev.timestamp < t0_us:
            raise OrderingError(f"event {e_i}: timestamp {ev.timestamp} precedes t0={t0_us}")
        prev = ev.timestamp
        idx[e_i] = ev.source
        ts[e_i] = ev.timestamp
        strength[e_i] = ev.strength
    dense = bin_arrays(idx, ts, strength, tau_us, layer_size, t0_us)
    return [TimestepFrame(layer_id, b, row) for b, row in enumerate(dense)]


def bin_arrays(
    idx: np.ndarray,
    ts: np.ndarray,
    strength: np.ndarray | None,
    tau_us: int,
    layer_size: int,
    t0_us: int = 0,
    n_bins: int | None = None,
) -> np.ndarray:
    """Vectorized binning into a dense ``(n_bins, layer_size)`` array.

    Inputs are assumed validated.  ``n_bins`` defaults to the bin of the last
    event plus one; events past ``n_bins`` are dropped.
    """
    bins = (np.asarray(ts, dtype=np.int64) - t0_us) // tau_us
    if n_bins is None:
        n_bins = int(bins.max()) + 1 if bins.size else 0
    out = np.zeros((n_bins, layer_size))
    if bins.size:
        keep = bins < n_bins
        w = np.ones(bins.shape) if strength is None else np.asarray(strength, dtype=np.float64)
        np.add.at(out, (bins[keep], np.asarray(idx)[keep]), w[keep])
    return out


def frames_to_array(frames: Iterable[TimestepFrame]) -> np.ndarray:
    frames = list(frames)
    if not frames:
        return np.zeros((0, 0))
    return np.stack([f.values for f in frames])


def total_strength(events: Iterable[Event]) -> float:
    return math.fsum(e.strength for e in events)

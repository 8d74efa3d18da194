"""
Event data ingestion and synthetic recordings.

Event files come in two canonical formats:

* CSV with header ``x,y,t_us,polarity`` (polarity 1 = ON, 0 = OFF)
* binary: 8-byte magic ``SPKEVT\\0\\0``, ``<u2`` version, ``<u8`` record count,
  then packed little-endian records ``(u16 x, u16 y, u64 t_us, u8 polarity)``

Vendor container formats can be plugged in with :func:`register_reader`.

A :class:`SensorMapping` crops the 128x128 sensor to a 23x23 window and gives
every pixel two input neurons, one per polarity:
``index = (y - y0) * 23 + (x - x0) + 529 * [polarity == OFF]``.
"""

from __future__ import annotations

import csv
import io
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, OrderingError, ParseError
from .events import DEFAULT_TAU_US, Event, bin_arrays

log = logging.getLogger(__name__)

EVENT_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"), ("t_us", "<u8"), ("polarity", "u1")])
BINARY_MAGIC = b"SPKEVT\x00\x00"
BINARY_VERSION = 1
CSV_HEADER = ("x", "y", "t_us", "polarity")
FORMATS = ("csv", "bin")
NO_LABEL = -1

_HEADER = struct.Struct("<8sHQ")


@dataclass(frozen=True)
class SensorMapping:
    crop_origin: tuple[int, int] = (52, 52)
    crop_size: tuple[int, int] = (23, 23)
    polarity_channels: int = 2
    sensor_size: tuple[int, int] = (128, 128)

    def __post_init__(self):
        x0, y0 = self.crop_origin
        w, h = self.crop_size
        if x0 < 0 or y0 < 0 or x0 + w > self.sensor_size[0] or y0 + h > self.sensor_size[1]:
            raise ConfigError(f"crop {self.crop_size} at {self.crop_origin} does not fit the sensor")
        if self.polarity_channels not in (1, 2):
            raise ConfigError("polarity_channels must be 1 or 2")

    @property
    def pixels(self) -> int:
        return self.crop_size[0] * self.crop_size[1]

    @property
    def n_inputs(self) -> int:
        return self.pixels * self.polarity_channels

    def index(self, x: int, y: int, polarity: int) -> int | None:
        """Input neuron for a sensor address, or None outside the crop."""
        cx, cy = x - self.crop_origin[0], y - self.crop_origin[1]
        if not (0 <= cx < self.crop_size[0] and 0 <= cy < self.crop_size[1]):
            return None
        off = self.pixels if (self.polarity_channels == 2 and polarity == 0) else 0
        return cy * self.crop_size[0] + cx + off

    def index_arrays(self, ev: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized :meth:`index`: returns ``(indices, inside_mask)``."""
        cx = ev["x"].astype(np.int64) - self.crop_origin[0]
        cy = ev["y"].astype(np.int64) - self.crop_origin[1]
        inside = (cx >= 0) & (cx < self.crop_size[0]) & (cy >= 0) & (cy < self.crop_size[1])
        idx = cy * self.crop_size[0] + cx
        if self.polarity_channels == 2:
            idx = idx + self.pixels * (ev["polarity"] == 0)
        return idx[inside], inside


@dataclass
class RecordingMeta:
    label: int
    duration: int
    source: str = ""

    def __post_init__(self):
        if self.duration < 1:
            raise ConfigError(f"recording {self.source!r} has duration {self.duration}")


@dataclass
class Recording:
    """Binned input frames ``(T, n_inputs)`` of one labelled recording."""

    frames: np.ndarray
    meta: RecordingMeta

    @property
    def label(self) -> int:
        return self.meta.label

    def __len__(self) -> int:
        return self.frames.shape[0]


# --- file formats -----------------------------------------------------------


def events_to_array(events: Iterable[Event]) -> np.ndarray:
    rows = [(e.x, e.y, e.timestamp, e.polarity) for e in events]
    return np.array(rows, dtype=EVENT_DTYPE)


def array_to_events(arr: np.ndarray) -> list[Event]:
    return [
        Event((int(x), int(y), int(p)), int(t))
        for x, y, t, p in zip(arr["x"].tolist(), arr["y"].tolist(), arr["t_us"].tolist(), arr["polarity"].tolist())
    ]


def _check_order(ts: np.ndarray, path, *, csv_lines: bool) -> None:
    if ts.size < 2:
        return
    bad = np.flatnonzero(np.diff(ts.astype(np.int64)) < 0)
    if bad.size:
        i = int(bad[0]) + 1
        where = f"line {i + 2}" if csv_lines else f"record {i}"
        raise OrderingError(f"{path}: {where}: timestamp {int(ts[i])} after {int(ts[i - 1])}")


def read_csv_events(path) -> np.ndarray:
    text = Path(path).read_text()
    if not text.strip():
        return np.zeros(0, dtype=EVENT_DTYPE)
    rows = []
    reader = csv.reader(io.StringIO(text))
    for lineno, rec in enumerate(reader, start=1):
        if not rec or (len(rec) == 1 and not rec[0].strip()):
            continue
        if lineno == 1 and tuple(c.strip() for c in rec) == CSV_HEADER:
            continue
        if len(rec) != 4:
            raise ParseError(f"expected 4 fields, got {len(rec)}", path=path, line=lineno)
        try:
            x, y, t, p = (int(c) for c in rec)
        except ValueError:
            raise ParseError(f"non-integer field in {','.join(rec)!r}", path=path, line=lineno) from None
        if p not in (0, 1):
            raise ParseError(f"polarity must be 0 or 1, got {p}", path=path, line=lineno)
        if not (0 <= x < 2**16 and 0 <= y < 2**16 and t >= 0):
            raise ParseError(f"field out of range in {','.join(rec)!r}", path=path, line=lineno)
        if rows and t < rows[-1][2]:
            raise OrderingError(f"{path}: line {lineno}: timestamp {t} after {rows[-1][2]}")
        rows.append((x, y, t, p))
    return np.array(rows, dtype=EVENT_DTYPE)


def read_binary_events(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        if not raw:
            return np.zeros(0, dtype=EVENT_DTYPE)
        raise ParseError("truncated header", path=path, offset=0)
    magic, version, count = _HEADER.unpack_from(raw)
    if magic != BINARY_MAGIC:
        raise ParseError(f"bad magic {magic!r}", path=path, offset=0)
    if version != BINARY_VERSION:
        raise ParseError(f"unsupported version {version}", path=path, offset=8)
    body = len(raw) - _HEADER.size
    if body != count * EVENT_DTYPE.itemsize:
        raise ParseError(
            f"header declares {count} records but body holds {body} bytes", path=path, offset=_HEADER.size
        )
    arr = np.frombuffer(raw, dtype=EVENT_DTYPE, count=count, offset=_HEADER.size).copy()
    if np.any(arr["polarity"] > 1):
        i = int(np.flatnonzero(arr["polarity"] > 1)[0])
        raise ParseError("polarity must be 0 or 1", path=path, offset=_HEADER.size + i * EVENT_DTYPE.itemsize)
    _check_order(arr["t_us"], path, csv_lines=False)
    return arr


READERS: dict[str, Callable[[Path], np.ndarray]] = {
    "csv": read_csv_events,
    "bin": read_binary_events,
}


def register_reader(name: str, reader: Callable[[Path], np.ndarray]) -> None:
    """Add a converter from a vendor format to an :data:`EVENT_DTYPE` array."""
    READERS[name] = reader


def read_events(path, fmt: str | None = None) -> np.ndarray:
    fmt = fmt or guess_format(path)
    if fmt not in READERS:
        raise ConfigError(f"unknown event format {fmt!r}; known: {sorted(READERS)}")
    return READERS[fmt](Path(path))


def parse_event_file(path, fmt: str | None = None) -> list[Event]:
    """Read an event file into sensor-addressed :class:`Event` objects."""
    return array_to_events(read_events(path, fmt))


def guess_format(path) -> str:
    suffix = Path(path).suffix.lower().lstrip(".")
    if suffix in READERS:
        return suffix
    raise ConfigError(f"cannot infer event format from {path!r}")


def write_events(path, events, fmt: str | None = None) -> int:
    """Write events (Event list or :data:`EVENT_DTYPE` array); returns the count."""
    arr = events if isinstance(events, np.ndarray) else events_to_array(events)
    arr = np.asarray(arr, dtype=EVENT_DTYPE)
    fmt = fmt or guess_format(path)
    path = Path(path)
    if fmt == "csv":
        lines = [",".join(CSV_HEADER)]
        lines += [f"{x},{y},{t},{p}" for x, y, t, p in arr.tolist()]
        path.write_text("\n".join(lines) + "\n")
    elif fmt == "bin":
        path.write_bytes(_HEADER.pack(BINARY_MAGIC, BINARY_VERSION, arr.size) + arr.tobytes())
    else:
        raise ConfigError(f"cannot write event format {fmt!r}")
    return int(arr.size)


# --- mapping and binning ----------------------------------------------------


def map_to_input(events: Sequence[Event], mapping: SensorMapping) -> tuple[list[Event], int]:
    """Re-address sensor events to input neurons; returns ``(events, n_dropped)``."""
    out, dropped = [], 0
    for ev in events:
        idx = mapping.index(ev.x, ev.y, ev.polarity)
        if idx is None:
            dropped += 1
        else:
            out.append(Event(idx, ev.timestamp, ev.strength))
    return out, dropped


def bin_recording(
    ev: np.ndarray,
    mapping: SensorMapping,
    tau_us: int = DEFAULT_TAU_US,
    t0_us: int | None = None,
    n_bins: int | None = None,
) -> np.ndarray:
    """Map and bin an event array into ``(T, n_inputs)`` frames.

    ``t0_us`` defaults to the first timestamp, so frame 0 holds the first event.
    """
    idx, inside = mapping.index_arrays(ev)
    ts = ev["t_us"].astype(np.int64)
    if t0_us is None:
        t0_us = int(ts[0]) if ts.size else 0
    return bin_arrays(idx, ts[inside], None, tau_us, mapping.n_inputs, t0_us, n_bins)


@dataclass
class Stream:
    """Concatenated recordings with per-timestep label and recording tracks.

    Gap timesteps carry :data:`NO_LABEL` in both tracks.
    """

    frames: np.ndarray
    labels: np.ndarray
    recording: np.ndarray

    def __len__(self) -> int:
        return self.frames.shape[0]

    def __iter__(self):
        # allows ``frames, labels = assemble_stream(...)``
        return iter((self.frames, self.labels))


def assemble_stream(
    recordings: Sequence[Recording],
    gap: int,
    rng: np.random.Generator | None,
) -> Stream:
    """Concatenate recordings in a random order with ``gap`` silent frames between.

    With ``rng=None`` the given order is kept.
    """
    if not recordings:
        raise ConfigError("cannot assemble a stream from zero recordings")
    if gap < 0:
        raise ConfigError(f"gap must be >= 0, got {gap}")
    order = np.arange(len(recordings)) if rng is None else rng.permutation(len(recordings))
    n_in = recordings[0].frames.shape[1]
    total = sum(len(r) for r in recordings) + gap * (len(recordings) - 1)
    frames = np.zeros((total, n_in))
    labels = np.full(total, NO_LABEL, dtype=np.int64)
    rec_ids = np.full(total, NO_LABEL, dtype=np.int64)
    pos = 0
    for n, r_i in enumerate(order):
        rec = recordings[r_i]
        if n:
            pos += gap
        frames[pos : pos + len(rec)] = rec.frames
        labels[pos : pos + len(rec)] = rec.label
        rec_ids[pos : pos + len(rec)] = r_i
        pos += len(rec)
    return Stream(frames, labels, rec_ids)


def split_train_test(
    recordings_by_label: dict[int, Sequence], n_train: int = 900, n_test: int = 100
) -> tuple[list, list]:
    """First ``n_train`` recordings of every label train, the last ``n_test`` test."""
    train, test = [], []
    for label in sorted(recordings_by_label):
        recs = list(recordings_by_label[label])
        if len(recs) < n_train + n_test:
            raise ConfigError(
                f"label {label} has {len(recs)} recordings, split needs {n_train}+{n_test}"
            )
        train += recs[:n_train]
        test += recs[len(recs) - n_test :]
    return train, test


# --- label manifests and dataset directories ---------------------------------


def read_manifest(path) -> list[tuple[str, int]]:
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = [p.strip() for p in line.split(",")]
        if len(parts) != 2:
            raise ParseError("expected 'recording-id,label'", path=path, line=lineno)
        try:
            out.append((parts[0], int(parts[1])))
        except ValueError:
            raise ParseError(f"label {parts[1]!r} is not an integer", path=path, line=lineno) from None
    return out


def write_manifest(path, entries: Iterable[tuple[str, int]]) -> None:
    Path(path).write_text("".join(f"{rid},{label}\n" for rid, label in entries))


def find_event_file(directory: Path, rec_id: str) -> Path:
    for fmt in READERS:
        p = directory / f"{rec_id}.{fmt}"
        if p.exists():
            return p
    raise ConfigError(f"no event file for recording {rec_id!r} in {directory}")


def load_dataset_dir(
    directory, mapping: SensorMapping, tau_us: int = DEFAULT_TAU_US, manifest: str = "labels.csv"
) -> dict[int, list[Recording]]:
    """Load every recording listed in the manifest, grouped by label in file order."""
    directory = Path(directory)
    by_label: dict[int, list[Recording]] = {}
    for rec_id, label in read_manifest(directory / manifest):
        path = find_event_file(directory, rec_id)
        frames = bin_recording(read_events(path), mapping, tau_us)
        if frames.shape[0] == 0:
            log.warning("recording %s holds no events inside the crop, skipped", rec_id)
            continue
        by_label.setdefault(label, []).append(Recording(frames, RecordingMeta(label, frames.shape[0], str(path))))
    return by_label


# --- synthetic moving patterns -----------------------------------------------

SYNTH_CLASSES = (
    "bar_right",
    "bar_left",
    "bar_down",
    "bar_up",
    "corner_right",
    "corner_left",
    "corner_down",
    "corner_up",
)
_DIRECTIONS = {"right": (1, 0), "left": (-1, 0), "down": (0, 1), "up": (0, -1)}


def resolve_class(cls) -> tuple[int, str]:
    if isinstance(cls, (int, np.integer)):
        if not 0 <= cls < len(SYNTH_CLASSES):
            raise ConfigError(f"unknown synthetic class id {cls}")
        return int(cls), SYNTH_CLASSES[cls]
    if cls not in SYNTH_CLASSES:
        raise ConfigError(f"unknown synthetic class {cls!r}; known: {', '.join(SYNTH_CLASSES)}")
    return SYNTH_CLASSES.index(cls), cls


def _shape_pixels(name: str, rng: np.random.Generator, bar_length: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Pixel offsets ``(dx, dy)`` of a pattern, relative to its anchor."""
    kind, direction = name.split("_")
    dx, dy = _DIRECTIONS[direction]
    width = 2
    if kind == "bar":
        length = int(rng.integers(8, 16)) if bar_length is None else bar_length
        along = np.arange(length)
        across = np.arange(width)
        a, b = np.meshgrid(along, across, indexing="ij")
        # bar lies across the direction of motion
        return (b.ravel(), a.ravel()) if dx else (a.ravel(), b.ravel())
    arm = int(rng.integers(6, 10))
    pts = set()
    for i in range(arm):
        for w in range(width):
            pts.add((i, w))
            pts.add((w, i))
    xs, ys = zip(*sorted(pts))
    xs, ys = np.array(xs), np.array(ys)
    # point the corner toward the direction of motion
    if dx < 0:
        xs = -xs
    if dy < 0:
        ys = -ys
    return xs, ys


def synth_events(
    cls,
    length: int,
    noise_rate: float,
    rng: np.random.Generator,
    mapping: SensorMapping = SensorMapping(),
    tau_us: int = DEFAULT_TAU_US,
    bar_length: int | None = None,
) -> tuple[np.ndarray, int]:
    """Sensor events of a pattern moving one pixel per timestep inside the crop.

    Newly covered pixels emit ON events, uncovered pixels emit OFF events; the
    pattern wraps around the crop edges.  Every input neuron additionally
    receives Poisson(``noise_rate``) background events per timestep.  Events
    get uniformly random sub-timestep times.  Bars are 8-15 pixels long unless
    ``bar_length`` fixes it.  Returns ``(events, class_id)``.
    """
    if length < 1:
        raise ConfigError(f"length must be >= 1, got {length}")
    if noise_rate < 0:
        raise ConfigError(f"noise rate must be >= 0, got {noise_rate}")
    class_id, name = resolve_class(cls)
    W, H = mapping.crop_size
    dx, dy = _DIRECTIONS[name.split("_")[1]]
    if bar_length is not None and bar_length < 1:
        raise ConfigError(f"bar length must be >= 1, got {bar_length}")
    sx, sy = _shape_pixels(name, rng, bar_length)
    ax, ay = int(rng.integers(0, W)), int(rng.integers(0, H))

    def occupancy(step: int) -> np.ndarray:
        occ = np.zeros((H, W), dtype=bool)
        occ[(ay + sy + dy * step) % H, (ax + sx + dx * step) % W] = True
        return occ

    chunks = []
    prev = occupancy(-1)
    for b in range(length):
        occ = occupancy(b)
        on_y, on_x = np.nonzero(occ & ~prev)
        off_y, off_x = np.nonzero(prev & ~occ)
        xs = [on_x, off_x]
        ys = [on_y, off_y]
        ps = [np.ones(on_x.size, np.uint8), np.zeros(off_x.size, np.uint8)]
        if noise_rate > 0:
            counts = rng.poisson(noise_rate, size=(2, H, W))
            for pol, c in ((1, counts[0]), (0, counts[1])):
                ny, nx = np.nonzero(c)
                rep = c[ny, nx]
                xs.append(np.repeat(nx, rep))
                ys.append(np.repeat(ny, rep))
                ps.append(np.full(rep.sum(), pol, np.uint8))
        fx, fy, fp = np.concatenate(xs), np.concatenate(ys), np.concatenate(ps)
        chunk = np.zeros(fx.size, dtype=EVENT_DTYPE)
        chunk["x"] = fx + mapping.crop_origin[0]
        chunk["y"] = fy + mapping.crop_origin[1]
        chunk["polarity"] = fp
        chunk["t_us"] = b * tau_us + rng.integers(0, tau_us, size=fx.size)
        chunks.append(chunk[np.argsort(chunk["t_us"], kind="stable")])
        prev = occ
    return np.concatenate(chunks), class_id


def synth_moving_pattern(
    cls,
    length: int,
    noise_rate: float,
    rng: np.random.Generator,
    mapping: SensorMapping = SensorMapping(),
    tau_us: int = DEFAULT_TAU_US,
    bar_length: int | None = None,
) -> tuple[np.ndarray, int]:
    """Binned frames ``(length, n_inputs)`` of :func:`synth_events` and the class id."""
    ev, class_id = synth_events(cls, length, noise_rate, rng, mapping, tau_us, bar_length)
    return bin_recording(ev, mapping, tau_us, t0_us=0, n_bins=length), class_id


def synth_event_sets(
    classes: Sequence[str],
    per_class: int,
    length: int,
    noise_rate: float,
    seed: int,
    mapping: SensorMapping = SensorMapping(),
    tau_us: int = DEFAULT_TAU_US,
    bar_length: int | None = None,
) -> Iterator[tuple[int, str, int, np.ndarray]]:
    """Yield ``(label, class name, index, events)``; one seeded stream per class."""
    if per_class < 0:
        raise ConfigError(f"recordings per class must be >= 0, got {per_class}")
    names = [resolve_class(cls)[1] for cls in classes]
    seqs = np.random.SeedSequence(seed).spawn(len(names))
    for label, (name, ss) in enumerate(zip(names, seqs)):
        rng = np.random.default_rng(ss)
        for n in range(per_class):
            ev, _ = synth_events(name, length, noise_rate, rng, mapping, tau_us, bar_length)
            yield label, name, n, ev


def synth_recordings(
    classes: Sequence[str],
    per_class: int,
    length: int,
    noise_rate: float,
    seed: int,
    mapping: SensorMapping = SensorMapping(),
    tau_us: int = DEFAULT_TAU_US,
    bar_length: int | None = None,
) -> dict[int, list[Recording]]:
    """``per_class`` recordings of each class, labelled by position in ``classes``."""
    out: dict[int, list[Recording]] = {label: [] for label in range(len(classes))}
    for label, name, n, ev in synth_event_sets(
        classes, per_class, length, noise_rate, seed, mapping, tau_us, bar_length
    ):
        frames = bin_recording(ev, mapping, tau_us, t0_us=0, n_bins=length)
        out[label].append(Recording(frames, RecordingMeta(label, length, f"synthetic:{name}:{n}")))
    return out

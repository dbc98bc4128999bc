"""AER event streams: parsing, serialization and synthetic pattern generation.

Timestamps are integer microseconds. Pixel addresses are 1-based
(x in 1..width, y in 1..height). Polarity is +1 (ON) or -1 (OFF).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, NamedTuple

import numpy as np

ON = 1
OFF = -1

TEXT_MAGIC = "AER1"

# little-endian fixed-width record used by the packed binary format
_PACKED_DTYPE = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("p", "i1")])
_PACKED_RECORD_SIZE = _PACKED_DTYPE.itemsize

_NMNIST_GEOMETRY = (34, 34)
_NMNIST_RECORD_SIZE = 5

_FORMAT_ALIASES = {
    "text": "text",
    "packed": "packed",
    "packed-binary": "packed",
    "binary": "packed",
    "nmnist": "nmnist",
    "nmnist-bin": "nmnist",
}


class StreamError(ValueError):
    """Base class for event stream errors."""


class StreamFormatError(StreamError):
    """Malformed record; carries a line number or byte offset."""

    def __init__(self, message, offset=None):
        super().__init__(message if offset is None else f"{message} (at {offset})")
        self.offset = offset


class GeometryError(StreamError):
    """Event address outside the declared sensor geometry."""


class OrderingError(StreamError):
    """Timestamps regress where a sorted stream is required."""


class CapabilityError(StreamError):
    """Requested operation is not supported for this format."""


class PatternSpecError(StreamError):
    """Invalid synthetic pattern specification."""


class Event(NamedTuple):
    x: int
    y: int
    t: int
    p: int


@dataclass(frozen=True, eq=False)
class EventStream:
    """Time-sorted AER stream with declared sensor geometry.

    Arrays are canonicalized on construction and must be treated as
    read-only afterwards; sharing across threads is then safe.
    """

    width: int
    height: int
    xs: np.ndarray
    ys: np.ndarray
    ts: np.ndarray
    ps: np.ndarray
    duration: int
    label: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "xs", np.asarray(self.xs, dtype=np.int32))
        object.__setattr__(self, "ys", np.asarray(self.ys, dtype=np.int32))
        object.__setattr__(self, "ts", np.asarray(self.ts, dtype=np.int64))
        object.__setattr__(self, "ps", np.asarray(self.ps, dtype=np.int8))
        n = len(self.xs)
        if not (len(self.ys) == len(self.ts) == len(self.ps) == n):
            raise StreamError("event field arrays must have equal length")
        if self.duration < 0:
            raise StreamError("duration must be non-negative")
        if n:
            if self.xs.min() < 1 or self.xs.max() > self.width:
                raise GeometryError(
                    f"x addresses must lie in 1..{self.width}"
                )
            if self.ys.min() < 1 or self.ys.max() > self.height:
                raise GeometryError(
                    f"y addresses must lie in 1..{self.height}"
                )
            if self.ts.min() < 0:
                raise StreamError("timestamps must be non-negative")
            if np.any(np.diff(self.ts) < 0):
                raise OrderingError("timestamps must be non-decreasing")
            if self.duration < int(self.ts[-1]):
                raise StreamError("duration must cover the last event")

    def __len__(self):
        return len(self.xs)

    def __iter__(self) -> Iterator[Event]:
        for x, y, t, p in zip(self.xs, self.ys, self.ts, self.ps):
            yield Event(int(x), int(y), int(t), int(p))

    def __eq__(self, other):
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.duration == other.duration
            and self.label == other.label
            and np.array_equal(self.xs, other.xs)
            and np.array_equal(self.ys, other.ys)
            and np.array_equal(self.ts, other.ts)
            and np.array_equal(self.ps, other.ps)
        )

    @property
    def duration_ms(self) -> float:
        return self.duration / 1000.0

    @classmethod
    def from_events(cls, width, height, events: Iterable[Event], duration=None,
                    label=None) -> "EventStream":
        evs = list(events)
        ts = [e.t for e in evs]
        if duration is None:
            duration = max(ts) if ts else 0
        return cls(
            width=width,
            height=height,
            xs=np.array([e.x for e in evs], dtype=np.int32),
            ys=np.array([e.y for e in evs], dtype=np.int32),
            ts=np.array(ts, dtype=np.int64),
            ps=np.array([e.p for e in evs], dtype=np.int8),
            duration=int(duration),
            label=label,
        )

    def truncated(self, max_t_us: int) -> "EventStream":
        """Keep only events with t <= max_t_us and clip the duration."""
        keep = int(np.searchsorted(self.ts, max_t_us, side="right"))
        return EventStream(
            width=self.width,
            height=self.height,
            xs=self.xs[:keep],
            ys=self.ys[:keep],
            ts=self.ts[:keep],
            ps=self.ps[:keep],
            duration=min(self.duration, int(max_t_us)),
            label=self.label,
        )

    def shifted(self, offset_us: int) -> "EventStream":
        """Return a copy with all timestamps (and duration) shifted."""
        return EventStream(
            width=self.width,
            height=self.height,
            xs=self.xs,
            ys=self.ys,
            ts=self.ts + int(offset_us),
            ps=self.ps,
            duration=self.duration + int(offset_us),
            label=self.label,
        )


def _canonical_format(fmt: str) -> str:
    key = fmt.lower()
    if key not in _FORMAT_ALIASES:
        raise CapabilityError(f"unknown stream format {fmt!r}")
    return _FORMAT_ALIASES[key]


def _finish(width, height, xs, ys, ts, ps, duration, strict, label):
    xs = np.asarray(xs, dtype=np.int64)
    ys = np.asarray(ys, dtype=np.int64)
    ts = np.asarray(ts, dtype=np.int64)
    ps = np.asarray(ps, dtype=np.int64)
    if len(ts) and np.any(np.diff(ts) < 0):
        if strict:
            bad = int(np.argmax(np.diff(ts) < 0)) + 1
            raise OrderingError(
                f"timestamps regress at event index {bad} "
                f"({int(ts[bad])} < {int(ts[bad - 1])}); "
                "use lenient mode to sort"
            )
        order = np.argsort(ts, kind="stable")
        xs, ys, ts, ps = xs[order], ys[order], ts[order], ps[order]
    if len(ts):
        duration = max(int(duration), int(ts[-1]))
    return EventStream(width=width, height=height, xs=xs, ys=ys, ts=ts, ps=ps,
                       duration=int(duration), label=label)


def _parse_header(fields, where):
    if len(fields) != 4 or fields[0] != TEXT_MAGIC:
        raise StreamFormatError(
            f"expected header '{TEXT_MAGIC} <width> <height> <duration>'", where
        )
    try:
        width, height, duration = (int(v) for v in fields[1:])
    except ValueError:
        raise StreamFormatError("non-integer header field", where) from None
    if width < 1 or height < 1:
        raise GeometryError(f"header declares empty geometry {width}x{height}")
    if duration < 0:
        raise StreamFormatError("negative duration in header", where)
    return width, height, duration


def _parse_text(data: str, strict, label):
    width = height = None
    duration = 0
    xs, ys, ts, ps = [], [], [], []
    for lineno, raw in enumerate(data.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if width is None:
            width, height, duration = _parse_header(fields, f"line {lineno}")
            continue
        if len(fields) != 4:
            raise StreamFormatError(
                f"expected 4 fields 'x y t p', got {len(fields)}", f"line {lineno}"
            )
        try:
            x, y, t, p = (int(v) for v in fields)
        except ValueError:
            raise StreamFormatError("non-integer event field", f"line {lineno}") from None
        if p not in (ON, OFF):
            raise StreamFormatError(f"polarity must be -1 or 1, got {p}", f"line {lineno}")
        if not (1 <= x <= width and 1 <= y <= height):
            raise GeometryError(
                f"event address ({x}, {y}) outside {width}x{height} (line {lineno})"
            )
        if t < 0:
            raise StreamFormatError("negative timestamp", f"line {lineno}")
        xs.append(x)
        ys.append(y)
        ts.append(t)
        ps.append(p)
    if width is None:
        # empty input: a stream with no events and no declared geometry
        return EventStream(width=1, height=1, xs=[], ys=[], ts=[], ps=[],
                           duration=0, label=label)
    return _finish(width, height, xs, ys, ts, ps, duration, strict, label)


def _parse_packed(data: bytes, strict, label):
    if not data.strip():
        return EventStream(width=1, height=1, xs=[], ys=[], ts=[], ps=[],
                           duration=0, label=label)
    nl = data.find(b"\n")
    if nl < 0:
        raise StreamFormatError("missing header line", "byte 0")
    try:
        header = data[:nl].decode("ascii")
    except UnicodeDecodeError:
        raise StreamFormatError("header is not ASCII", "byte 0") from None
    width, height, duration = _parse_header(header.split(), "header")
    body = data[nl + 1:]
    if len(body) % _PACKED_RECORD_SIZE:
        raise StreamFormatError(
            f"body length {len(body)} is not a multiple of {_PACKED_RECORD_SIZE}",
            f"byte {nl + 1 + len(body) - len(body) % _PACKED_RECORD_SIZE}",
        )
    rec = np.frombuffer(body, dtype=_PACKED_DTYPE)
    ps = rec["p"].astype(np.int64)
    bad = np.nonzero((ps != ON) & (ps != OFF))[0]
    if len(bad):
        off = nl + 1 + int(bad[0]) * _PACKED_RECORD_SIZE
        raise StreamFormatError(f"polarity must be -1 or 1, got {ps[bad[0]]}", f"byte {off}")
    xs = rec["x"].astype(np.int64)
    ys = rec["y"].astype(np.int64)
    if len(xs) and (xs.min() < 1 or xs.max() > width or ys.min() < 1 or ys.max() > height):
        raise GeometryError(f"event address outside {width}x{height}")
    return _finish(width, height, xs, ys, rec["t"].astype(np.int64), ps,
                   duration, strict, label)


def _parse_nmnist(data: bytes, strict, label, geometry):
    """Decode the published 40-bit big-endian N-MNIST record layout.

    Per 5-byte record: byte 0 is x, byte 1 is y, bit 7 of byte 2 is the
    polarity and the remaining 23 bits are the microsecond timestamp.
    Raw addresses are 0-based and shifted to this library's 1-based grid.
    """
    if len(data) % _NMNIST_RECORD_SIZE:
        raise StreamFormatError(
            f"length {len(data)} is not a multiple of {_NMNIST_RECORD_SIZE}",
            f"byte {len(data) - len(data) % _NMNIST_RECORD_SIZE}",
        )
    width, height = geometry or _NMNIST_GEOMETRY
    raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, _NMNIST_RECORD_SIZE)
    xs = raw[:, 0].astype(np.int64) + 1
    ys = raw[:, 1].astype(np.int64) + 1
    ps = np.where(raw[:, 2] & 0x80, ON, OFF).astype(np.int64)
    ts = (
        (raw[:, 2].astype(np.int64) & 0x7F) << 16
    ) | (raw[:, 3].astype(np.int64) << 8) | raw[:, 4].astype(np.int64)
    if len(xs) and (xs.max() > width or ys.max() > height):
        raise GeometryError(f"event address outside {width}x{height}")
    return _finish(width, height, xs, ys, ts, ps, 0, strict, label)


def parse_stream(data: bytes | str, fmt: str = "text", *, strict: bool = True,
                 label: int | None = None,
                 geometry: tuple[int, int] | None = None) -> EventStream:
    """Parse raw input into an EventStream.

    In strict mode non-monotonic timestamps raise OrderingError; lenient
    mode sorts stably. ``geometry`` only applies to the headerless
    nmnist format (default 34x34).
    """
    kind = _canonical_format(fmt)
    if kind == "text":
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        return _parse_text(data, strict, label)
    if isinstance(data, str):
        data = data.encode("ascii")
    if kind == "packed":
        return _parse_packed(data, strict, label)
    return _parse_nmnist(data, strict, label, geometry)


def serialize_stream(stream: EventStream, fmt: str = "text") -> bytes:
    """Serialize a stream; round-trips exactly for text and packed formats."""
    kind = _canonical_format(fmt)
    if kind == "nmnist":
        raise CapabilityError("nmnist format is read-only")
    header = f"{TEXT_MAGIC} {stream.width} {stream.height} {stream.duration}\n"
    if kind == "text":
        lines = [header]
        lines.extend(
            f"{x} {y} {t} {p}\n"
            for x, y, t, p in zip(stream.xs, stream.ys, stream.ts, stream.ps)
        )
        return "".join(lines).encode("ascii")
    rec = np.empty(len(stream), dtype=_PACKED_DTYPE)
    rec["x"] = stream.xs
    rec["y"] = stream.ys
    rec["t"] = stream.ts
    rec["p"] = stream.ps
    return header.encode("ascii") + rec.tobytes()


@dataclass(frozen=True)
class SyntheticPatternSpec:
    """Moving-stimulus description for the synthetic generator.

    ``kind`` is "bar", "filled" or "hollow". Orientation follows the
    filter-bank convention: a 0 degree bar has a vertical axis and sweeps
    horizontally, and the axis rotates with the angle; for shapes the
    angle is the motion direction. The stimulus travels at ``velocity``
    pixels per millisecond and wraps around once it leaves the field,
    starting ``phase`` of the way through that travel cycle. Pattern
    events mark pixels the stimulus starts covering (ON) or stops
    covering (OFF); noise events are uniform over pixels and time.
    """

    kind: str = "bar"
    orientation_deg: float = 0.0
    velocity: float = 0.25
    noise_rate: float = 0.0
    width: int = 32
    height: int = 32
    duration_ms: float = 100.0
    thickness: float = 1.0
    shape_size: float | None = None
    phase: float = 0.0

    def validate(self):
        if self.kind not in ("bar", "filled", "hollow"):
            raise PatternSpecError(f"unknown pattern kind {self.kind!r}")
        if self.width < 1 or self.height < 1:
            raise PatternSpecError("geometry must have positive area")
        if self.velocity <= 0:
            raise PatternSpecError("velocity must be positive")
        if self.noise_rate < 0:
            raise PatternSpecError("noise rate must be non-negative")
        if self.duration_ms < 0:
            raise PatternSpecError("duration must be non-negative")
        if self.thickness <= 0:
            raise PatternSpecError("thickness must be positive")
        if not 0.0 <= self.phase < 1.0:
            raise PatternSpecError("phase must lie in [0, 1)")


def _pattern_masks(spec: SyntheticPatternSpec, times_ms: np.ndarray):
    """Yield the stimulus pixel mask at each time step."""
    xs = np.arange(1, spec.width + 1, dtype=float)
    ys = np.arange(1, spec.height + 1, dtype=float)
    gx, gy = np.meshgrid(xs, ys)
    theta = math.radians(spec.orientation_deg)
    nx, ny = math.cos(theta), math.sin(theta)
    proj = gx * nx + gy * ny
    if spec.kind == "bar":
        pmin, pmax = float(proj.min()), float(proj.max())
        span = (pmax - pmin) + spec.thickness
        start = pmin - spec.thickness / 2.0
        for t in times_ms:
            d = start + (spec.phase * span + spec.velocity * t) % span
            yield np.abs(proj - d) <= spec.thickness / 2.0
    else:
        size = spec.shape_size or min(spec.width, spec.height) / 3.0
        half = size / 2.0
        cx0 = (1 + spec.width) / 2.0
        cy0 = (1 + spec.height) / 2.0
        pmin, pmax = float(proj.min()), float(proj.max())
        span = (pmax - pmin) + 2.0 * half + 2.0
        for t in times_ms:
            travel = (spec.phase * span + spec.velocity * t) % span
            shift = travel - span / 2.0
            dx = np.abs(gx - (cx0 + shift * nx))
            dy = np.abs(gy - (cy0 + shift * ny))
            inside = np.maximum(dx, dy) <= half
            if spec.kind == "hollow":
                inner = np.maximum(dx, dy) <= half - spec.thickness
                inside &= ~inner
            yield inside


def generate_synthetic(spec: SyntheticPatternSpec, seed: int,
                       label: int | None = None) -> EventStream:
    """Render a deterministic event stream for a moving synthetic stimulus.

    The stimulus is rasterized every half pixel of travel; pixels whose
    coverage changes emit one event (ON when covered, OFF when uncovered)
    at that step's time. Noise events are drawn afterwards from a seeded
    generator, so the pattern itself never depends on the seed.
    """
    spec.validate()
    duration_us = int(round(spec.duration_ms * 1000.0))
    if duration_us <= 0:
        return EventStream(width=spec.width, height=spec.height,
                           xs=[], ys=[], ts=[], ps=[], duration=0, label=label)

    step_ms = 0.5 / spec.velocity
    n_steps = int(math.floor(spec.duration_ms / step_ms)) + 1
    if n_steps > 2_000_000:
        raise PatternSpecError("step count too large; raise velocity or cut duration")
    times_ms = np.arange(n_steps) * step_ms

    xs, ys, ts, ps = [], [], [], []
    prev = np.zeros((spec.height, spec.width), dtype=bool)
    for t_ms, mask in zip(times_ms, _pattern_masks(spec, times_ms)):
        t_us = int(round(t_ms * 1000.0))
        for polarity, changed in ((ON, mask & ~prev), (OFF, prev & ~mask)):
            yy, xx = np.nonzero(changed)
            if len(xx):
                xs.append(xx + 1)
                ys.append(yy + 1)
                ts.append(np.full(len(xx), t_us, dtype=np.int64))
                ps.append(np.full(len(xx), polarity, dtype=np.int64))
        prev = mask

    rng = np.random.default_rng(seed)
    n_noise = int(rng.poisson(spec.noise_rate * spec.duration_ms))
    if n_noise:
        xs.append(rng.integers(1, spec.width + 1, n_noise))
        ys.append(rng.integers(1, spec.height + 1, n_noise))
        ts.append(rng.integers(0, duration_us + 1, n_noise))
        ps.append(rng.integers(0, 2, n_noise) * 2 - 1)

    if xs:
        xs = np.concatenate(xs)
        ys = np.concatenate(ys)
        ts = np.concatenate(ts)
        ps = np.concatenate(ps)
        order = np.argsort(ts, kind="stable")
        xs, ys, ts, ps = xs[order], ys[order], ts[order], ps[order]
    return EventStream(width=spec.width, height=spec.height, xs=xs, ys=ys,
                       ts=ts, ps=ps, duration=duration_us, label=label)


def concatenate_streams(streams: list[EventStream]) -> EventStream:
    """Join samples end to end into one continuous stream.

    Each stream's timestamps are shifted by the accumulated duration of
    its predecessors. Geometries must match; the result is unlabeled.
    """
    if not streams:
        raise StreamError("cannot concatenate zero streams")
    width, height = streams[0].width, streams[0].height
    offset = 0
    xs, ys, ts, ps = [], [], [], []
    for s in streams:
        if (s.width, s.height) != (width, height):
            raise GeometryError("cannot concatenate streams with differing geometry")
        xs.append(s.xs)
        ys.append(s.ys)
        ts.append(s.ts + offset)
        ps.append(s.ps)
        offset += s.duration
    return EventStream(width=width, height=height,
                       xs=np.concatenate(xs), ys=np.concatenate(ys),
                       ts=np.concatenate(ts), ps=np.concatenate(ps),
                       duration=offset)

"""Signed trade-event series: data model, CSV tape I/O and C/NC classification.

A series is stored column-wise (numpy arrays) because every estimator works
on whole columns. Row-level access is available through ``EventSeries.event``.
"""

from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import DataIntegrityError, EmptySeriesError, TapeParseError, ValidationError

ZERO_TOLERANCE = 1e-9
NS_PER_SECOND = 1_000_000_000
NS_PER_DAY = 86_400 * NS_PER_SECOND
TAPE_HEADER = ("ts_ns", "sign", "mid_before", "mid_after")
DEFAULT_SESSION = (dt.time(9, 30), dt.time(15, 30))


class EventType(IntEnum):
    NC = 0
    C = 1


EVENT_TYPES = (EventType.NC, EventType.C)


@dataclass(frozen=True)
class MarketEvent:
    timestamp: int
    sign: int
    mid_before: float
    mid_after: float

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ValidationError(f"sign must be -1 or +1, got {self.sign}")
        if not (math.isfinite(self.mid_before) and math.isfinite(self.mid_after)):
            raise ValidationError("mid prices must be finite")

    @property
    def ret(self) -> float:
        return self.mid_after - self.mid_before


def classify(r: float, tol: float = ZERO_TOLERANCE) -> EventType:
    """NC when the mid does not move before the next trade, C otherwise."""
    if not math.isfinite(r):
        raise ValidationError(f"return must be finite, got {r!r}")
    return EventType.NC if abs(r) <= tol else EventType.C


def classify_array(r: np.ndarray, tol: float = ZERO_TOLERANCE) -> np.ndarray:
    """Vectorised :func:`classify`; returns a boolean "is C" mask."""
    r = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(r)):
        raise ValidationError("returns must be finite")
    return np.abs(r) > tol


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class EventSeries:
    """Time-ordered signed market orders, concatenated over trading days.

    ``bounds`` holds segment offsets: day ``d`` covers rows
    ``bounds[d]:bounds[d+1]``. No lagged statistic pairs rows from two days.

    ``labels`` records where the C/NC types come from. ``"returns"`` (the
    normal case) means types are the classification of each row's return.
    ``"generator"`` is reserved for synthetic paths whose model moves the
    price on events the generator labelled NC; such series cannot be written
    to a tape.
    """

    ts: np.ndarray
    sign: np.ndarray
    mid_before: np.ndarray
    mid_after: np.ndarray
    bounds: np.ndarray
    instrument_id: str = "SYNTH"
    is_c: np.ndarray | None = None
    labels: str = "returns"
    returns: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        sign = np.asarray(self.sign)
        mb = np.asarray(self.mid_before, dtype=float)
        ma = np.asarray(self.mid_after, dtype=float)
        ts = np.asarray(self.ts, dtype=np.int64)
        bounds = np.asarray(self.bounds, dtype=np.int64)
        n = len(sign)
        if not (len(mb) == len(ma) == len(ts) == n):
            raise ValidationError("column lengths differ")
        if n == 0:
            raise EmptySeriesError("event series is empty")
        if not np.all((sign == 1) | (sign == -1)):
            raise ValidationError("signs must be -1 or +1")
        if not (np.all(np.isfinite(mb)) and np.all(np.isfinite(ma))):
            raise ValidationError("mid prices must be finite")
        if bounds[0] != 0 or bounds[-1] != n or np.any(np.diff(bounds) <= 0):
            raise ValidationError("day bounds must be strictly increasing from 0 to len(series)")
        r = ma - mb
        if self.labels == "returns":
            is_c = classify_array(r)
            if self.is_c is not None and not np.array_equal(np.asarray(self.is_c, bool), is_c):
                raise DataIntegrityError("event types disagree with the classification of returns")
        elif self.labels == "generator":
            if self.is_c is None:
                raise ValidationError("generator-labelled series need explicit types")
            is_c = np.asarray(self.is_c, dtype=bool)
            if len(is_c) != n:
                raise ValidationError("type column length differs")
        else:
            raise ValidationError(f"unknown label source {self.labels!r}")
        for d in range(len(bounds) - 1):
            seg = ts[bounds[d]:bounds[d + 1]]
            if np.any(np.diff(seg) < 0):
                raise DataIntegrityError(f"timestamps decrease inside day segment {d}")
        object.__setattr__(self, "ts", _readonly(ts))
        object.__setattr__(self, "sign", _readonly(sign.astype(np.int8)))
        object.__setattr__(self, "mid_before", _readonly(mb))
        object.__setattr__(self, "mid_after", _readonly(ma))
        object.__setattr__(self, "bounds", _readonly(bounds))
        object.__setattr__(self, "is_c", _readonly(is_c))
        object.__setattr__(self, "returns", _readonly(r))

    def __len__(self):
        return len(self.sign)

    @property
    def n_days(self) -> int:
        return len(self.bounds) - 1

    @property
    def day_lengths(self) -> np.ndarray:
        return np.diff(self.bounds)

    @property
    def types(self) -> np.ndarray:
        """Event types as an int array (0 = NC, 1 = C)."""
        return self.is_c.astype(np.int8)

    def days(self):
        for d in range(self.n_days):
            yield slice(int(self.bounds[d]), int(self.bounds[d + 1]))

    def event(self, i: int) -> tuple[MarketEvent, EventType, float]:
        ev = MarketEvent(int(self.ts[i]), int(self.sign[i]), float(self.mid_before[i]),
                         float(self.mid_after[i]))
        return ev, EventType(int(self.is_c[i])), float(self.returns[i])

    def select_days(self, days) -> "EventSeries":
        """Sub-series made of the given day indices (in the given order)."""
        days = list(days)
        if not days:
            raise EmptySeriesError("no days selected")
        idx = np.concatenate([np.arange(self.bounds[d], self.bounds[d + 1]) for d in days])
        lengths = [self.bounds[d + 1] - self.bounds[d] for d in days]
        return EventSeries(
            ts=self.ts[idx], sign=self.sign[idx], mid_before=self.mid_before[idx],
            mid_after=self.mid_after[idx], bounds=np.concatenate([[0], np.cumsum(lengths)]),
            instrument_id=self.instrument_id,
            is_c=self.is_c[idx] if self.labels == "generator" else None,
            labels=self.labels,
        )

    def same_as(self, other: "EventSeries") -> bool:
        return (
            self.instrument_id == other.instrument_id
            and self.labels == other.labels
            and all(
                np.array_equal(getattr(self, k), getattr(other, k))
                for k in ("ts", "sign", "mid_before", "mid_after", "bounds", "is_c", "returns")
            )
        )


def event_probability(series: EventSeries, event_type: EventType) -> float:
    """Fraction of events of the given type."""
    n = len(series)
    if n == 0:
        raise EmptySeriesError("event series is empty")
    n_c = int(np.count_nonzero(series.is_c))
    if EventType(event_type) is EventType.C:
        return n_c / n
    return (n - n_c) / n


def _parse_session(session) -> tuple[int, int]:
    if isinstance(session, str):
        try:
            a, b = session.split("-")
            session = (dt.time.fromisoformat(a.strip()), dt.time.fromisoformat(b.strip()))
        except ValueError as exc:
            raise ValidationError(f"session must look like 09:30-15:30, got {session!r}") from exc
    start, end = session
    to_s = lambda t: t.hour * 3600 + t.minute * 60 + t.second  # noqa: E731
    s0, s1 = to_s(start), to_s(end)
    if s0 >= s1:
        raise ValidationError("session start must precede session end")
    return s0 * NS_PER_SECOND, s1 * NS_PER_SECOND


def _parse_mid(text, row, half_tick):
    try:
        value = float(text)
    except ValueError:
        raise TapeParseError(row, f"mid price {text!r} is not a number") from None
    if not math.isfinite(value):
        raise TapeParseError(row, f"mid price {text!r} is not finite")
    if half_tick is not None:
        try:
            q = Decimal(text) / half_tick
        except InvalidOperation:
            raise TapeParseError(row, f"mid price {text!r} is not a decimal") from None
        if q != q.to_integral_value():
            raise TapeParseError(row, f"mid price {text} is off the half-tick grid")
    return value


def ingest_tape(path, session=DEFAULT_SESSION, tick_size=None, instrument_id=None) -> EventSeries:
    """Read a CSV tape, keep events inside the daily session, split into days.

    Timestamps are UTC nanoseconds. The session window is half-open,
    ``start <= time of day < end``. With ``tick_size`` every mid must sit on
    the half-tick grid.
    """
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"{path}: no such file")
    lo, hi = _parse_session(session)
    half_tick = None
    if tick_size is not None:
        if not (math.isfinite(tick_size) and tick_size > 0):
            raise ValidationError(f"tick size must be positive, got {tick_size}")
        half_tick = Decimal(str(tick_size)) / 2
    ts, sign, mb, ma = [], [], [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != TAPE_HEADER:
            raise TapeParseError(1, f"header must be {','.join(TAPE_HEADER)}")
        for row_no, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise TapeParseError(row_no, f"expected 4 fields, got {len(row)}")
            try:
                t = int(row[0])
            except ValueError:
                raise TapeParseError(row_no, f"timestamp {row[0]!r} is not an integer") from None
            try:
                s = int(row[1])
            except ValueError:
                raise TapeParseError(row_no, f"sign {row[1]!r} is not an integer") from None
            if s not in (-1, 1):
                raise TapeParseError(row_no, f"sign must be -1 or 1, got {s}")
            b = _parse_mid(row[2], row_no, half_tick)
            a = _parse_mid(row[3], row_no, half_tick)
            tod = t % NS_PER_DAY
            if lo <= tod < hi:
                ts.append(t)
                sign.append(s)
                mb.append(b)
                ma.append(a)
    if not ts:
        raise EmptySeriesError(f"{path}: no events inside the session window")
    ts = np.asarray(ts, dtype=np.int64)
    day = ts // NS_PER_DAY
    if np.any(np.diff(day) < 0):
        raise DataIntegrityError(f"{path}: rows are not grouped by day in time order")
    starts = np.flatnonzero(np.diff(day)) + 1
    bounds = np.concatenate([[0], starts, [len(ts)]])
    return EventSeries(
        ts=ts, sign=np.asarray(sign, dtype=np.int8), mid_before=np.asarray(mb),
        mid_after=np.asarray(ma), bounds=bounds,
        instrument_id=instrument_id or path.stem,
    )


def write_tape(series: EventSeries, path) -> Path:
    """Write the canonical CSV tape. Floats use ``repr`` so they read back bit-exact."""
    if series.labels != "returns":
        raise ValidationError("only return-classified series can be written to a tape")
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TAPE_HEADER)
        for t, s, b, a in zip(series.ts.tolist(), series.sign.tolist(),
                              series.mid_before.tolist(), series.mid_after.tolist()):
            w.writerow((t, s, repr(b), repr(a)))
    return path

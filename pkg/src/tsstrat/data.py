"""Long-format multi-series datasets: loading, validation and splitting.

Timestamps are turned into integer ordinals once, at load time. Downstream
code only ever sees integers spaced ``frequency.step`` apart, so the lag and
strategy logic does not care whether the data is weekly, hourly or indexed.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateKey,
    EmptyDataset,
    MissingColumn,
    ParseError,
    SeriesTooShort,
)

_EPOCH_DAY = date(1970, 1, 1).toordinal()
_EPOCH_DT = datetime(1970, 1, 1)

# unit name -> (ordinal unit, steps per unit)
_UNITS = {"D": ("day", 1), "W": ("day", 7), "H": ("hour", 1), "M": ("month", 1)}
_FREQ_RE = re.compile(r"^\s*(\d*)\s*([DWHM])\s*$", re.IGNORECASE)


@dataclass(frozen=True)
class Frequency:
    """Step between consecutive observations, in ordinal units.

    ``unit`` is ``None`` for plain integer timestamps, otherwise one of
    ``"day"``, ``"hour"`` or ``"month"``; weekly data is ``unit="day", step=7``.
    """

    unit: str | None = None
    step: int = 1

    @classmethod
    def parse(cls, spec: "str | int | Frequency") -> "Frequency":
        if isinstance(spec, Frequency):
            return spec
        if isinstance(spec, bool):
            raise ValueError(f"invalid frequency {spec!r}")
        if isinstance(spec, int):
            if spec < 1:
                raise ValueError(f"frequency step must be positive, got {spec}")
            return cls(None, spec)
        text = str(spec).strip()
        if text.isdigit():
            return cls.parse(int(text))
        m = _FREQ_RE.match(text)
        if not m:
            raise ValueError(f"unrecognised frequency {spec!r} (use D, W, H, M, or an integer step)")
        mult = int(m.group(1)) if m.group(1) else 1
        unit, per = _UNITS[m.group(2).upper()]
        if mult < 1:
            raise ValueError(f"frequency multiplier must be positive, got {spec!r}")
        return cls(unit, mult * per)

    @property
    def is_calendar(self) -> bool:
        return self.unit is not None

    def spec(self) -> str | int:
        if self.unit is None:
            return self.step
        if self.unit == "day":
            return "W" if self.step == 7 else f"{self.step}D"
        return f"{self.step}{'H' if self.unit == 'hour' else 'M'}"

    def to_ordinal(self, text: str) -> int:
        text = text.strip()
        if self.unit is None:
            return int(text)
        dt = datetime.fromisoformat(text)
        if self.unit == "day":
            return dt.toordinal()
        if self.unit == "hour":
            return int((dt - _EPOCH_DT).total_seconds() // 3600)
        return dt.year * 12 + dt.month - 1

    def to_datetime64(self, ordinals: np.ndarray) -> np.ndarray:
        """Vectorised ordinal -> ``datetime64`` conversion (calendar units only)."""
        ordinals = np.asarray(ordinals, dtype=np.int64)
        if self.unit == "day":
            return (ordinals - _EPOCH_DAY).astype("datetime64[D]")
        if self.unit == "hour":
            return ordinals.astype("datetime64[h]")
        if self.unit == "month":
            return (ordinals - 1970 * 12).astype("datetime64[M]")
        raise ValueError("plain integer timestamps have no calendar representation")

    def format(self, ordinal: int) -> str:
        if self.unit is None:
            return str(int(ordinal))
        if self.unit == "day":
            return date.fromordinal(int(ordinal)).isoformat()
        if self.unit == "hour":
            return str(np.datetime64(int(ordinal), "h").astype("datetime64[s]")).replace(" ", "T")
        year, month0 = divmod(int(ordinal), 12)
        return f"{year:04d}-{month0 + 1:02d}-01"


@dataclass(frozen=True)
class RoleMap:
    """Which source columns play the id / datetime / target / exogenous roles.

    ``exogenous`` maps column name to ``"real"`` or ``"categorical"``.
    """

    id: str
    datetime: str
    target: str
    exogenous: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        for name, kind in self.exogenous.items():
            if kind not in ("real", "categorical"):
                raise ValueError(f"exogenous column {name!r}: type must be real or categorical, got {kind!r}")
        cols = [self.id, self.datetime, self.target, *self.exogenous]
        if len(set(cols)) != len(cols):
            raise ValueError(f"role map assigns one column to several roles: {cols}")

    @classmethod
    def from_dict(cls, d: Mapping) -> "RoleMap":
        return cls(d["id"], d["datetime"], d["target"], dict(d.get("exogenous", {})))

    def to_dict(self) -> dict:
        return {"id": self.id, "datetime": self.datetime, "target": self.target,
                "exogenous": dict(self.exogenous)}


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Series:
    """One series: sorted ordinal timestamps, target values, exogenous columns."""

    id: str
    timestamps: np.ndarray
    target: np.ndarray
    exog: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "timestamps", _frozen(self.timestamps, np.int64))
        object.__setattr__(self, "target", _frozen(self.target, np.float64))
        object.__setattr__(self, "exog", {k: _frozen(v, np.float64) for k, v in self.exog.items()})
        n = len(self.timestamps)
        if len(self.target) != n or any(len(v) != n for v in self.exog.values()):
            raise ValueError(f"series {self.id!r}: column lengths differ")

    def __len__(self) -> int:
        return len(self.timestamps)

    def slice(self, start: int | None = None, stop: int | None = None) -> "Series":
        sl = slice(start, stop)
        return Series(self.id, self.timestamps[sl], self.target[sl],
                      {k: v[sl] for k, v in self.exog.items()})

    def until(self, timestamp: int) -> "Series":
        """Observations with timestamp <= ``timestamp``."""
        return self.slice(0, int(np.searchsorted(self.timestamps, timestamp, side="right")))

    def equals(self, other: "Series") -> bool:
        return (
            self.id == other.id
            and np.array_equal(self.timestamps, other.timestamps)
            and np.array_equal(self.target, other.target, equal_nan=True)
            and self.exog.keys() == other.exog.keys()
            and all(np.array_equal(v, other.exog[k], equal_nan=True) for k, v in self.exog.items())
        )


@dataclass(frozen=True, eq=False)
class LongFrame:
    """Tidy multi-series dataset, immutable once built.

    Series are kept sorted by id; within a series, timestamps are strictly
    increasing. ``vocab`` holds the stored vocabulary of every categorical
    exogenous column (values are indices into it).
    """

    series: tuple[Series, ...]
    frequency: Frequency = Frequency()
    role_map: RoleMap | None = None
    vocab: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        ordered = tuple(sorted(self.series, key=lambda s: s.id))
        ids = [s.id for s in ordered]
        if len(set(ids)) != len(ids):
            raise DuplicateKey(f"series ids repeated: {sorted({i for i in ids if ids.count(i) > 1})}")
        for s in ordered:
            d = np.diff(s.timestamps)
            if np.any(d == 0):
                t = int(s.timestamps[1:][d == 0][0])
                raise DuplicateKey(f"duplicate (series, timestamp) pair ({s.id!r}, {self.frequency.format(t)})")
            if np.any(d < 0):
                raise ValueError(f"series {s.id!r}: timestamps not sorted")
        object.__setattr__(self, "series", ordered)
        object.__setattr__(self, "frequency", Frequency.parse(self.frequency))

    # -- construction helpers -------------------------------------------------

    @classmethod
    def from_records(
        cls,
        records: Iterable[tuple],
        frequency: "Frequency | str | int" = 1,
        role_map: RoleMap | None = None,
        vocab: Mapping[str, tuple[str, ...]] | None = None,
    ) -> "LongFrame":
        """Build from ``(series_id, timestamp, target[, exog_dict])`` tuples."""
        grouped: dict[str, list] = {}
        for rec in records:
            sid, ts, y = rec[0], rec[1], rec[2]
            ex = rec[3] if len(rec) > 3 else {}
            grouped.setdefault(str(sid), []).append((int(ts), float(y), dict(ex)))
        if not grouped:
            raise EmptyDataset("no records")
        out = []
        for sid, rows in grouped.items():
            rows.sort(key=lambda r: r[0])
            ts = [r[0] for r in rows]
            if len(set(ts)) != len(ts):
                dup = next(t for t in ts if ts.count(t) > 1)
                raise DuplicateKey(f"duplicate (series, timestamp) pair ({sid!r}, {dup})")
            names = sorted({k for r in rows for k in r[2]})
            exog = {k: [r[2].get(k, math.nan) for r in rows] for k in names}
            out.append(Series(sid, ts, [r[1] for r in rows], exog))
        return cls(tuple(out), Frequency.parse(frequency), role_map, dict(vocab or {}))

    @classmethod
    def from_arrays(
        cls,
        values: Mapping[str, Sequence[float]],
        start: int | str | Mapping[str, int | str] = 0,
        frequency: "Frequency | str | int" = 1,
        exog: Mapping[str, Mapping[str, Sequence[float]]] | None = None,
    ) -> "LongFrame":
        """Regular series from value arrays; ``start`` is the first ordinal or a date string."""
        freq = Frequency.parse(frequency)
        out = []
        for sid, vals in values.items():
            s0 = start[sid] if isinstance(start, Mapping) else start
            if isinstance(s0, str):
                s0 = freq.to_ordinal(s0)
            ts = s0 + freq.step * np.arange(len(vals), dtype=np.int64)
            out.append(Series(str(sid), ts, vals, dict((exog or {}).get(sid, {}))))
        if not out:
            raise EmptyDataset("no series")
        return cls(tuple(out), freq)

    def with_series(self, series: Iterable[Series]) -> "LongFrame":
        return LongFrame(tuple(series), self.frequency, self.role_map, self.vocab)

    # -- accessors --------------------------------------------------------------

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(s.id for s in self.series)

    @property
    def n_series(self) -> int:
        return len(self.series)

    @property
    def n_records(self) -> int:
        return sum(len(s) for s in self.series)

    @property
    def exog_names(self) -> tuple[str, ...]:
        names = sorted({k for s in self.series for k in s.exog})
        return tuple(names)

    def lengths(self) -> dict[str, int]:
        return {s.id: len(s) for s in self.series}

    def __getitem__(self, series_id: str) -> Series:
        for s in self.series:
            if s.id == series_id:
                return s
        raise KeyError(series_id)

    def __contains__(self, series_id: str) -> bool:
        return any(s.id == series_id for s in self.series)

    def __iter__(self) -> Iterator[Series]:
        return iter(self.series)

    def records(self) -> Iterator[tuple[str, int, float, dict]]:
        for s in self.series:
            for i in range(len(s)):
                yield s.id, int(s.timestamps[i]), float(s.target[i]), {k: float(v[i]) for k, v in s.exog.items()}

    def equals(self, other: "LongFrame") -> bool:
        return (
            self.frequency == other.frequency
            and self.ids == other.ids
            and all(a.equals(b) for a, b in zip(self.series, other.series))
        )


def concat_frames(a: LongFrame, b: LongFrame) -> LongFrame:
    """Union of two frames, per series, re-sorted by timestamp."""
    out = []
    for sid in sorted(set(a.ids) | set(b.ids)):
        parts = [f[sid] for f in (a, b) if sid in f]
        ts = np.concatenate([p.timestamps for p in parts])
        order = np.argsort(ts, kind="stable")
        y = np.concatenate([p.target for p in parts])[order]
        names = set().union(*(p.exog.keys() for p in parts))
        ex = {k: np.concatenate([p.exog.get(k, np.full(len(p), np.nan)) for p in parts])[order] for k in names}
        out.append(Series(sid, ts[order], y, ex))
    return LongFrame(tuple(out), a.frequency, a.role_map, a.vocab)


# -- loading ------------------------------------------------------------------


def _parse_float(text: str, line: int, column: str) -> float:
    text = text.strip()
    if text == "" or text.lower() in ("nan", "na", "null"):
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"column {column!r}: cannot parse {text!r} as a number", line) from None


def load_long_csv(
    path: str | Path,
    role_map: RoleMap | Mapping,
    frequency: "Frequency | str | int",
    delimiter: str = ",",
) -> LongFrame:
    """Read a long-format CSV (one row per series/timestamp) into a LongFrame.

    Empty target cells load as NaN and are left for :func:`validate_frame`
    to flag. Categorical exogenous values are dictionary-encoded against a
    sorted vocabulary.
    """
    if not isinstance(role_map, RoleMap):
        role_map = RoleMap.from_dict(role_map)
    freq = Frequency.parse(frequency)
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataset(f"{path}: file is empty") from None
        cols = {name: i for i, name in enumerate(header)}
        needed = [role_map.id, role_map.datetime, role_map.target, *role_map.exogenous]
        missing = [c for c in needed if c not in cols]
        if missing:
            raise MissingColumn(f"{path}: columns {missing} not found in header {header}")
        raw: list[tuple[int, str, int, float, dict[str, str]]] = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line_no)
            sid = row[cols[role_map.id]].strip()
            if not sid:
                raise ParseError(f"empty series id in column {role_map.id!r}", line_no)
            ts_text = row[cols[role_map.datetime]]
            try:
                ts = freq.to_ordinal(ts_text)
            except ValueError:
                raise ParseError(f"cannot parse timestamp {ts_text.strip()!r}", line_no) from None
            y = _parse_float(row[cols[role_map.target]], line_no, role_map.target)
            ex = {name: row[cols[name]].strip() for name in role_map.exogenous}
            raw.append((line_no, sid, ts, y, ex))
    if not raw:
        raise EmptyDataset(f"{path}: no data rows")

    vocab = {
        name: tuple(sorted({r[4][name] for r in raw if r[4][name] != ""}))
        for name, kind in role_map.exogenous.items() if kind == "categorical"
    }
    seen: dict[tuple[str, int], int] = {}
    records = []
    for line_no, sid, ts, y, ex in raw:
        key = (sid, ts)
        if key in seen:
            raise DuplicateKey(
                f"line {line_no}: duplicate (series, timestamp) pair ({sid!r}, {freq.format(ts)}), "
                f"first seen on line {seen[key]}"
            )
        seen[key] = line_no
        encoded = {}
        for name, kind in role_map.exogenous.items():
            if kind == "categorical":
                encoded[name] = float(vocab[name].index(ex[name])) if ex[name] != "" else math.nan
            else:
                encoded[name] = _parse_float(ex[name], line_no, name)
        records.append((sid, ts, y, encoded))
    return LongFrame.from_records(records, freq, role_map, vocab)


def load_wide_csv(
    path: str | Path,
    datetime_column: str,
    frequency: "Frequency | str | int",
    channels: Sequence[str] | None = None,
    delimiter: str = ",",
) -> LongFrame:
    """Read a wide CSV (one column per channel, e.g. the ILI export) as series.

    Each channel becomes a series whose id is the column name.
    """
    freq = Frequency.parse(frequency)
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDataset(f"{path}: file is empty") from None
        if datetime_column not in header:
            raise MissingColumn(f"{path}: datetime column {datetime_column!r} not in header")
        chans = list(channels) if channels is not None else [h for h in header if h != datetime_column]
        missing = [c for c in chans if c not in header]
        if missing:
            raise MissingColumn(f"{path}: channels {missing} not in header")
        idx = {h: i for i, h in enumerate(header)}
        records = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line_no)
            try:
                ts = freq.to_ordinal(row[idx[datetime_column]])
            except ValueError:
                raise ParseError(f"cannot parse timestamp {row[idx[datetime_column]]!r}", line_no) from None
            for c in chans:
                records.append((c, ts, _parse_float(row[idx[c]], line_no, c)))
    if not records:
        raise EmptyDataset(f"{path}: no data rows")
    return LongFrame.from_records(records, freq, RoleMap("series_id", datetime_column, "value"))


# -- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class SeriesReport:
    series_id: str
    length: int
    first_timestamp: int | None
    last_timestamp: int | None
    irregularities: int
    missing: int


@dataclass(frozen=True)
class ValidationReport:
    series: tuple[SeriesReport, ...]
    aligned: bool
    violations: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return not self.violations

    def format(self, frequency: Frequency | None = None) -> str:
        fmt = (frequency or Frequency()).format
        lines = [f"{'series':<20} {'length':>7} {'first':>12} {'last':>12} {'irreg':>6} {'missing':>8}"]
        for r in self.series:
            first = fmt(r.first_timestamp) if r.first_timestamp is not None else "-"
            last = fmt(r.last_timestamp) if r.last_timestamp is not None else "-"
            lines.append(f"{r.series_id:<20} {r.length:>7} {first:>12} {last:>12} {r.irregularities:>6} {r.missing:>8}")
        lines.append(f"aligned: {str(self.aligned).lower()}")
        lines.append(f"violations: {len(self.violations)}")
        lines.extend(f"  - {v}" for v in self.violations)
        return "\n".join(lines)


def validate_frame(frame: LongFrame) -> ValidationReport:
    """Check every LongFrame invariant; violations are reported, never raised."""
    step = frame.frequency.step
    reports = []
    violations = []
    for s in frame.series:
        n = len(s)
        deltas = np.diff(s.timestamps)
        irregular = int(np.count_nonzero(deltas != step))
        nonincreasing = int(np.count_nonzero(deltas <= 0))
        missing = int(np.count_nonzero(~np.isfinite(s.target)))
        missing += sum(int(np.count_nonzero(np.isnan(v))) for v in s.exog.values())
        reports.append(SeriesReport(
            s.id, n,
            int(s.timestamps[0]) if n else None,
            int(s.timestamps[-1]) if n else None,
            irregular, missing,
        ))
        if n == 0:
            violations.append(f"series {s.id!r}: empty")
        if nonincreasing:
            violations.append(f"series {s.id!r}: {nonincreasing} non-increasing timestamp step(s)")
        if irregular:
            violations.append(f"series {s.id!r}: {irregular} step(s) differ from frequency {frame.frequency.spec()}")
        if missing:
            violations.append(f"series {s.id!r}: {missing} missing or non-finite value(s)")
    if frame.n_series == 0:
        violations.append("dataset has no series")
    return ValidationReport(tuple(reports), check_alignment(frame), tuple(violations))


def check_alignment(frame: LongFrame) -> bool:
    """True iff all series share an identical timestamp vector."""
    if frame.n_series <= 1:
        return True
    first = frame.series[0].timestamps
    return all(np.array_equal(first, s.timestamps) for s in frame.series[1:])


def temporal_split(frame: LongFrame, test_horizon: int) -> tuple[LongFrame, LongFrame]:
    """Per series, the last ``test_horizon`` points become the test frame."""
    if test_horizon < 1:
        raise ValueError("test_horizon must be positive")
    train, test = [], []
    for s in frame.series:
        if len(s) <= test_horizon:
            raise SeriesTooShort(
                f"series {s.id!r} has {len(s)} points, needs more than test_horizon={test_horizon}",
                series_id=s.id,
            )
        train.append(s.slice(0, len(s) - test_horizon))
        test.append(s.slice(len(s) - test_horizon))
    return frame.with_series(train), frame.with_series(test)

"""Loading and preprocessing of daily case-count series.

Input tables are comma-separated with a header row and the columns
``date, region, cases, population``. Each region becomes one
:class:`RegionSeries` on a gapless daily grid.
"""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

PER_100K = 100_000
TRAIN_DAYS = 56
DEFAULT_LOG_OFFSET = 0.01

PHASES = (
    "exponential increase",
    "subexponential increase",
    "plateau",
    "subexponential decline",
    "exponential decline",
)

DEFAULT_SCHEMA = {
    "date": "date",
    "region": "region",
    "cases": "cases",
    "population": "population",
}


class DataError(ValueError):
    """Raised for malformed or inconsistent input data."""


def _as_date(value) -> dt.date:
    if isinstance(value, dt.datetime):
        return value.date()
    if isinstance(value, dt.date):
        return value
    if isinstance(value, np.datetime64):
        return value.astype("datetime64[D]").item()
    return dt.date.fromisoformat(str(value).strip())


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class RegionSeries:
    """Daily case counts of one region.

    ``dates`` is a ``datetime64[D]`` array with a step of exactly one day.
    """

    region_id: str
    dates: np.ndarray
    cases: np.ndarray
    population: int

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        cases = np.asarray(self.cases, dtype=np.int64)
        if dates.shape != cases.shape or dates.ndim != 1:
            raise DataError("dates and cases must be 1-d arrays of equal length")
        if len(dates) > 1 and np.any(np.diff(dates).astype(int) != 1):
            raise DataError(f"region {self.region_id!r}: dates are not a gapless daily grid")
        if int(self.population) <= 0:
            raise DataError(f"region {self.region_id!r}: population must be positive")
        object.__setattr__(self, "dates", _frozen(dates))
        object.__setattr__(self, "cases", _frozen(cases))
        object.__setattr__(self, "population", int(self.population))

    def __len__(self) -> int:
        return len(self.cases)

    @property
    def incidence(self) -> np.ndarray:
        """Cases per 100,000 people per day."""
        return self.cases * PER_100K / self.population

    @property
    def start(self) -> dt.date:
        return self.dates[0].item()

    @property
    def end(self) -> dt.date:
        return self.dates[-1].item()

    def index_of(self, day) -> int:
        """Position of ``day`` in the series; raises ``KeyError`` when outside."""
        offset = (np.datetime64(_as_date(day), "D") - self.dates[0]).astype(int)
        if offset < 0 or offset >= len(self.dates):
            raise KeyError(f"{day} outside {self.start}..{self.end} for {self.region_id!r}")
        return int(offset)


@dataclass(frozen=True)
class PhaseLabel:
    region_id: str
    intervals: tuple = field(default_factory=tuple)  # (start, end, phase), inclusive dates

    def __post_init__(self):
        ivs = sorted((_as_date(a), _as_date(b), _normalize_phase(p)) for a, b, p in self.intervals)
        for a, b, _ in ivs:
            if b < a:
                raise DataError(f"phase interval {a}..{b} ends before it starts")
        for (_, b0, _), (a1, _, _) in zip(ivs, ivs[1:]):
            if a1 <= b0:
                raise DataError(f"overlapping phase intervals for {self.region_id!r}")
        object.__setattr__(self, "intervals", tuple(ivs))

    def phase_at(self, day) -> str | None:
        day = _as_date(day)
        for a, b, phase in self.intervals:
            if a <= day <= b:
                return phase
        return None


def _normalize_phase(name: str) -> str:
    norm = " ".join(str(name).strip().lower().replace("_", " ").replace("-", " ").split())
    if norm not in PHASES:
        raise DataError(f"unknown phase {name!r}; expected one of {PHASES}")
    return norm


@dataclass(frozen=True)
class TrainingWindow:
    """The 57 observations ``N[t-56], ..., N[t]`` ending at ``origin``."""

    region_id: str
    origin: dt.date
    dates: np.ndarray
    values: np.ndarray
    population: int
    log_offset: float = DEFAULT_LOG_OFFSET

    def __post_init__(self):
        object.__setattr__(self, "dates", _frozen(np.asarray(self.dates, dtype="datetime64[D]")))
        object.__setattr__(self, "values", _frozen(np.asarray(self.values, dtype=np.int64)))

    @property
    def incidence(self) -> np.ndarray:
        return self.values * PER_100K / self.population

    @property
    def log_values(self) -> np.ndarray:
        return to_log_incidence(self.values, self.population, self.log_offset)


def to_log_incidence(counts, population: int, log_offset: float = DEFAULT_LOG_OFFSET):
    """``log(incidence + offset)`` for daily (or aggregated) counts."""
    return np.log(np.asarray(counts, dtype=float) * PER_100K / population + log_offset)


def from_log_incidence(y, population: int, log_offset: float = DEFAULT_LOG_OFFSET):
    """Inverse of :func:`to_log_incidence`, clamped at zero (real-valued counts)."""
    inc = np.exp(np.asarray(y, dtype=float)) - log_offset
    return np.maximum(inc, 0.0) * population / PER_100K


def load_series(path, schema: Mapping[str, str] | None = None) -> dict[str, RegionSeries]:
    """Read a delimited case table into one raw series per region.

    ``schema`` maps the logical columns (date, region, cases, population) to the
    column names used in the file. Negative counts are kept; see :func:`preprocess`.
    """
    cols = dict(DEFAULT_SCHEMA)
    if schema:
        cols.update(schema)
    rows: dict[str, dict[dt.date, int]] = {}
    pops: dict[str, int] = {}
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in cols.values() if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing columns {missing}")
        for lineno, row in enumerate(reader, start=2):
            try:
                day = _as_date(row[cols["date"]])
                region = row[cols["region"]].strip()
                count = int(row[cols["cases"]])
                pop = int(row[cols["population"]])
            except (TypeError, ValueError, AttributeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed row ({exc})") from None
            if not region:
                raise DataError(f"{path}:{lineno}: empty region")
            if pop <= 0:
                raise DataError(f"{path}:{lineno}: non-positive population")
            if pops.setdefault(region, pop) != pop:
                raise DataError(f"{path}:{lineno}: population changes within region {region!r}")
            days = rows.setdefault(region, {})
            if day in days:
                raise DataError(f"{path}:{lineno}: duplicate observation for {region!r} on {day}")
            days[day] = count

    out = {}
    for region, days in rows.items():
        ordered = sorted(days)
        span = (ordered[-1] - ordered[0]).days + 1
        if span != len(ordered):
            raise DataError(f"region {region!r}: {span - len(ordered)} missing day(s)")
        out[region] = RegionSeries(
            region_id=region,
            dates=np.array(ordered, dtype="datetime64[D]"),
            cases=np.array([days[d] for d in ordered], dtype=np.int64),
            population=pops[region],
        )
    return out


def write_series(path, series: Mapping[str, RegionSeries] | list) -> None:
    """Write series in the format read by :func:`load_series`."""
    items = series.values() if isinstance(series, Mapping) else series
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["date", "region", "cases", "population"])
        for s in items:
            for day, c in zip(s.dates, s.cases):
                w.writerow([str(day), s.region_id, int(c), s.population])


def preprocess(series: RegionSeries) -> RegionSeries:
    """Replace each negative count by the (already cleaned) previous day's count.

    A negative count on the first day becomes 0.
    """
    cases = np.array(series.cases, dtype=np.int64)
    if not np.any(cases < 0):
        return series
    for t in np.flatnonzero(cases < 0):
        cases[t] = cases[t - 1] if t > 0 else 0
    return RegionSeries(series.region_id, series.dates, cases, series.population)


def load_phases(path) -> dict[str, PhaseLabel]:
    """Read manually assigned epidemic phases (region, start_date, end_date, phase)."""
    by_region: dict[str, list] = {}
    with open(Path(path), newline="") as fh:
        reader = csv.DictReader(fh)
        for lineno, row in enumerate(reader, start=2):
            try:
                by_region.setdefault(row["region"].strip(), []).append(
                    (_as_date(row["start_date"]), _as_date(row["end_date"]), row["phase"])
                )
            except (KeyError, TypeError, ValueError, AttributeError) as exc:
                raise DataError(f"{path}:{lineno}: malformed phase row ({exc})") from None
    return {r: PhaseLabel(r, tuple(ivs)) for r, ivs in by_region.items()}


def forecast_origins(series: RegionSeries, first, last, horizon: int = 14) -> list[dt.date]:
    """Sundays in ``[first, last]`` usable as forecast origins.

    An origin needs ``TRAIN_DAYS`` days of history before it and, unless
    ``horizon`` is 0, ``horizon`` observed days after it so that the forecast
    can be scored.
    """
    first, last = _as_date(first), _as_date(last)
    if first > last:
        raise ValueError(f"first ({first}) is after last ({last})")
    earliest = series.start + dt.timedelta(days=TRAIN_DAYS)
    latest = series.end - dt.timedelta(days=horizon)
    lo, hi = max(first, earliest), min(last, latest)
    if lo > hi:
        return []
    # date.weekday(): Monday == 0, Sunday == 6
    day = lo + dt.timedelta(days=(6 - lo.weekday()) % 7)
    out = []
    while day <= hi:
        out.append(day)
        day += dt.timedelta(days=7)
    return out


def training_window(
    series: RegionSeries, origin, log_offset: float = DEFAULT_LOG_OFFSET
) -> TrainingWindow:
    origin = _as_date(origin)
    end = series.index_of(origin)
    start = end - TRAIN_DAYS
    if start < 0:
        raise DataError(
            f"origin {origin} has only {end} day(s) of history; {TRAIN_DAYS} required"
        )
    return TrainingWindow(
        region_id=series.region_id,
        origin=origin,
        dates=series.dates[start : end + 1],
        values=series.cases[start : end + 1],
        population=series.population,
        log_offset=log_offset,
    )

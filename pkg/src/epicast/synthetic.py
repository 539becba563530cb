"""Synthetic renewal epidemics for demos and end-to-end checks."""

from __future__ import annotations

import csv
import datetime as dt
from pathlib import Path

import numpy as np

from .corpus import RegionSeries
from .renewal import GenerationInterval

# R-ranges used to label segments; boundaries are inclusive on the lower side
_PHASE_BANDS = (
    (1.08, "exponential increase"),
    (1.02, "subexponential increase"),
    (0.98, "plateau"),
    (0.92, "subexponential decline"),
    (-np.inf, "exponential decline"),
)


def phase_of(r: float) -> str:
    for lower, name in _PHASE_BANDS:
        if r >= lower:
            return name
    raise AssertionError("unreachable")


def simulate_renewal(
    r_daily,
    w,
    seed_cases,
    rng: np.random.Generator,
    weekday_effect=None,
    start_weekday: int = 0,
) -> np.ndarray:
    """Poisson renewal process driven by a daily R path.

    ``seed_cases`` fills the first days; ``weekday_effect`` (7 multipliers,
    Monday first) scales the expected count of each day of the week.
    """
    r_daily = np.asarray(r_daily, float)
    w = np.asarray(w, float)
    seed_cases = np.asarray(seed_cases, float)
    n0, n = len(seed_cases), len(r_daily)
    cases = np.zeros(n)
    cases[:n0] = seed_cases
    for t in range(n0, n):
        k = min(t, len(w))
        lam = np.dot(w[:k], cases[t - k : t][::-1])
        mult = 1.0 if weekday_effect is None else weekday_effect[(start_weekday + t) % 7]
        cases[t] = rng.poisson(r_daily[t] * lam * mult)
    return cases.astype(np.int64)


def piecewise_r(n_days: int, rng: np.random.Generator, min_len=28, max_len=70, sd=0.08):
    """Piecewise-constant R path with segments of random length."""
    r = np.empty(n_days)
    bounds = []
    t = 0
    while t < n_days:
        length = int(rng.integers(min_len, max_len + 1))
        value = float(np.exp(rng.normal(0.0, sd)))
        r[t : t + length] = value
        bounds.append((t, min(t + length, n_days) - 1, value))
        t += length
    return r, bounds


def synthetic_region(
    region_id: str,
    start: dt.date,
    n_days: int,
    rng: np.random.Generator,
    population: int = 10_000_000,
    level: float = 2000.0,
    weekday_effect=None,
    gi: GenerationInterval = GenerationInterval(),
):
    """Simulate one region, steering R so daily counts stay within ~[level/10, level*10].

    Returns the series and its phase intervals ``[(start, end, phase), ...]``.
    """
    w = gi.w
    r_path, bounds = piecewise_r(n_days, rng)
    # steer segment values toward the target level to avoid extinction or explosion
    seed = np.full(len(w), level)
    cases = np.zeros(n_days, dtype=np.int64)
    cases[: len(w)] = rng.poisson(seed)
    r_used = np.ones(n_days)
    phases = []
    for a, b, value in bounds:
        lo = max(a, len(w))
        recent = cases[max(lo - 7, 0) : lo].mean() if lo > 0 else level
        if recent > 5 * level:
            value = min(value, 1 / value, 0.93)
        elif recent < level / 5:
            value = max(value, 1 / value, 1.07)
        r_used[a : b + 1] = value
        if b >= len(w):
            sim = simulate_renewal(
                r_used[: b + 1], w, cases[:lo], rng, weekday_effect, start.weekday()
            )
            cases[lo : b + 1] = sim[lo:]
        phases.append((start + dt.timedelta(days=a), start + dt.timedelta(days=b), phase_of(value)))
    dates = np.arange(np.datetime64(start), np.datetime64(start) + n_days)
    return RegionSeries(region_id, dates, cases, population), phases, r_used


def write_phases(path, phases_by_region) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["region", "start_date", "end_date", "phase"])
        for region, intervals in phases_by_region.items():
            for a, b, phase in intervals:
                w.writerow([region, a.isoformat(), b.isoformat(), phase])


def synthetic_corpus(
    n_regions: int = 6,
    start: dt.date = dt.date(2020, 1, 19),
    end: dt.date = dt.date(2021, 3, 15),
    seed: int = 0,
):
    """Several regions with weekday reporting effects; returns (series, phases)."""
    rng = np.random.default_rng(seed)
    n_days = (end - start).days + 1
    series, phases = {}, {}
    weekday = np.array([1.1, 1.05, 1.0, 1.0, 1.0, 0.95, 0.9])
    for i in range(n_regions):
        region = f"R{i + 1:02d}"
        pop = int(rng.integers(2, 20)) * 1_000_000
        level = float(rng.uniform(200, 1500)) * pop / 10_000_000
        s, ph, _ = synthetic_region(region, start, n_days, rng, pop, level, weekday)
        series[region] = s
        phases[region] = ph
    return series, phases

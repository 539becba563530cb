"""Forecast evaluation: weekly CRPS on the log scale, calibration, sharpness,
bias, pairwise relative skill and hotspot detection."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy import stats

from .corpus import DEFAULT_LOG_OFFSET, PER_100K, PhaseLabel, RegionSeries, to_log_incidence
from .forecast import ForecastDraws

MAD_TO_SD = 1.4826
HOTSPOT_GROWTH = 0.25
HOTSPOT_MIN_WEEKLY = 70.0  # cases per 100k
SCORE_FLOOR = 1e-9


def weekly_aggregate(draws, observed=None):
    """Sum days 1-7 and 8-14 of each draw (and of ``observed``, if given).

    Returns ``(week1, week2)`` or ``((week1, week2), (obs1, obs2))``.
    """
    d = draws.draws if isinstance(draws, ForecastDraws) else np.asarray(draws)
    if d.ndim != 2 or d.shape[1] != 14:
        raise ValueError(f"weekly aggregation needs a 14-day horizon, got shape {d.shape}")
    weeks = (d[:, :7].sum(axis=1), d[:, 7:].sum(axis=1))
    if observed is None:
        return weeks
    obs = np.asarray(observed)
    if obs.shape != (14,):
        raise ValueError("observations must cover the same 14 days")
    return weeks, (obs[:7].sum(), obs[7:].sum())


def crps_sample(x, y) -> float:
    """CRPS of the empirical distribution of ``x`` at ``y``.

    ``mean|x - y| - sum_{d,e}|x_d - x_e| / (2 D^2)``, evaluated in
    ``O(D log D)`` from the sorted sample.
    """
    x = np.sort(np.asarray(x, dtype=float).ravel())
    n = x.size
    if n < 2:
        raise ValueError("CRPS needs at least two draws")
    # sum over ordered pairs of |x_d - x_e|: each gap between consecutive
    # order statistics is crossed by k * (n - k) unordered pairs
    k = np.arange(1, n)
    pair_sum = 2.0 * np.sum(np.diff(x) * k * (n - k))
    return max(0.0, float(np.mean(np.abs(x - y)) - pair_sum / (2.0 * n * n)))


def crps_log(draws, observed, population: int = PER_100K, log_offset: float = DEFAULT_LOG_OFFSET):
    """CRPS after mapping counts to ``log(incidence per 100k + offset)``."""
    return crps_sample(
        to_log_incidence(draws, population, log_offset),
        float(to_log_incidence(observed, population, log_offset)),
    )


def pit(draws, observed, rng: np.random.Generator | None = None) -> float:
    """Randomized PIT ``(#{x < y} + V (#{x == y} + 1)) / (D + 1)``.

    ``V`` is uniform on (0, 1) when ``rng`` is given and fixed at 0.5 otherwise.
    """
    x = np.asarray(draws).ravel()
    if x.size < 2:
        raise ValueError("PIT needs at least two draws")
    v = 0.5 if rng is None else rng.random()
    below = np.count_nonzero(x < observed)
    ties = np.count_nonzero(x == observed)
    return float((below + v * (ties + 1)) / (x.size + 1))


def interval_coverage(draws, observed, level: float) -> bool:
    """Whether ``observed`` lies in the central ``level`` interval (type-7 quantiles)."""
    x = np.asarray(draws, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("coverage needs at least two draws")
    lo, hi = np.quantile(x, [(1 - level) / 2, (1 + level) / 2])
    return bool(lo <= observed <= hi)


def dispersion(values) -> float:
    """Normalized median absolute deviation about the median."""
    x = np.asarray(values, dtype=float).ravel()
    return float(MAD_TO_SD * np.median(np.abs(x - np.median(x))))


def bias(draws, observed) -> float:
    x = np.asarray(draws).ravel()
    return float(np.count_nonzero(x > observed) / x.size)


@dataclass(frozen=True)
class ScoreRecord:
    model_id: str
    region_id: str
    origin: dt.date
    week: int
    crps_log: float
    pit: float
    covered_50: bool
    covered_95: bool
    dispersion: float
    bias: float
    phase: str = ""
    observed: float = float("nan")
    median: float = float("nan")

    @property
    def target_end(self) -> dt.date:
        return self.origin + dt.timedelta(days=7 * self.week)


def observed_window(series: RegionSeries, origin: dt.date, horizon: int = 14) -> np.ndarray:
    i = series.index_of(origin)
    if i + horizon >= len(series):
        raise KeyError(f"observations for {series.region_id!r} end before {origin} + {horizon} days")
    return series.cases[i + 1 : i + 1 + horizon]


def score_forecast(
    fc: ForecastDraws,
    series: RegionSeries,
    phases: PhaseLabel | None = None,
    log_offset: float = DEFAULT_LOG_OFFSET,
    rng: np.random.Generator | None = None,
) -> list[ScoreRecord]:
    """One record per forecast week; ``rng`` randomizes the PIT."""
    weeks, obs = weekly_aggregate(fc, observed_window(series, fc.origin, fc.horizon))
    out = []
    for k, (w, o) in enumerate(zip(weeks, obs), start=1):
        logw = to_log_incidence(w, series.population, log_offset)
        end = fc.origin + dt.timedelta(days=7 * k)
        out.append(
            ScoreRecord(
                model_id=fc.model_id,
                region_id=fc.region_id,
                origin=fc.origin,
                week=k,
                crps_log=crps_log(w, o, series.population, log_offset),
                pit=pit(w, o, rng),
                covered_50=interval_coverage(w, o, 0.50),
                covered_95=interval_coverage(w, o, 0.95),
                dispersion=dispersion(logw),
                bias=bias(w, o),
                phase=(phases.phase_at(end) or "") if phases else "",
                observed=float(o),
                median=float(np.median(w)),
            )
        )
    return out


@dataclass(frozen=True)
class RelativeSkillTable:
    models: tuple
    theta: np.ndarray  # theta[i, j]: geometric mean over targets of score_i / score_j
    skill: np.ndarray

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.models, self.skill.tolist()))


def relative_skill(scores: Mapping[str, Mapping]) -> RelativeSkillTable:
    """Pairwise score ratios and relative skill.

    ``scores[model][target]`` is the mean score of ``model`` on ``target``;
    every model must be scored on the same targets.
    """
    models = tuple(scores)
    if not models:
        raise ValueError("no models to compare")
    targets = sorted(scores[models[0]], key=repr)
    for m in models[1:]:
        if set(scores[m]) != set(targets):
            raise ValueError(f"model {m!r} is scored on a different set of targets")
    logs = np.log(
        np.maximum(np.array([[scores[m][t] for t in targets] for m in models], float), SCORE_FLOOR)
    )
    mean_log = logs.mean(axis=1)
    theta = np.exp(mean_log[:, None] - mean_log[None, :])
    np.fill_diagonal(theta, 1.0)
    n = len(models)
    if n == 1:
        skill = np.ones(1)
    else:
        log_theta = mean_log[:, None] - mean_log[None, :]
        skill = np.exp(log_theta.sum(axis=1) / (n - 1))
    return RelativeSkillTable(models, theta, skill)


def weekly_incidence(series: RegionSeries, day) -> float:
    """Trailing 7-day sum of daily incidence ending on ``day``."""
    i = series.index_of(day)
    if i < 6:
        raise KeyError(f"fewer than 7 days of data before {day}")
    return float(series.cases[i - 6 : i + 1].sum() * PER_100K / series.population)


def hotspot_from_weekly(current: float, previous: float) -> tuple[int, bool]:
    """(label, included) from two consecutive weekly incidences per 100k."""
    if previous == 0:
        label = int(current > 0)
    else:
        label = int((current - previous) / previous >= HOTSPOT_GROWTH)
    return label, bool(previous >= HOTSPOT_MIN_WEEKLY)


def hotspot_label(series: RegionSeries, t) -> tuple[int, bool]:
    """Hotspot label at ``t`` and whether the target passes the incidence filter."""
    t = t if isinstance(t, dt.date) else dt.date.fromisoformat(str(t))
    i = series.index_of(t)
    if i < 13:
        raise KeyError(f"hotspot at {t} needs 14 days of history")
    # growth on raw weekly counts (population cancels, and integer arithmetic
    # keeps the 25% boundary exact); the filter uses incidence per 100k
    current = int(series.cases[i - 6 : i + 1].sum())
    previous = int(series.cases[i - 13 : i - 6].sum())
    label, _ = hotspot_from_weekly(current, previous)
    return label, bool(previous * PER_100K / series.population >= HOTSPOT_MIN_WEEKLY)


def exceedance_prob(week_draws, baseline) -> float:
    """Fraction of draws whose weekly total exceeds ``1.25 * baseline``."""
    x = np.asarray(week_draws, dtype=float)
    return float(np.mean(x > (1.0 + HOTSPOT_GROWTH) * np.asarray(baseline, dtype=float)))


def hotspot_prob(fc: ForecastDraws, series: RegionSeries, week: int) -> float:
    """Predicted hotspot probability for forecast week 1 or 2.

    Week 1 grows from the observed week ending at the origin; week 2 grows
    from each draw's own week-1 total.
    """
    w1, w2 = weekly_aggregate(fc)
    if week == 1:
        i = series.index_of(fc.origin)
        return exceedance_prob(w1, series.cases[i - 6 : i + 1].sum())
    if week == 2:
        return exceedance_prob(w2, w1)
    raise ValueError("week must be 1 or 2")


def auc(probs, labels) -> float:
    """Area under the ROC curve via the Mann-Whitney statistic (ties count 1/2)."""
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative labels")
    ranks = stats.rankdata(probs)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))

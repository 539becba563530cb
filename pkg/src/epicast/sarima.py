"""Bayesian SARIMA(p, d, q)(0, 1, 0)_7 on log incidence.

The seasonal part is a fixed weekly difference. The non-seasonal ARMA part
is fitted with the conditional Gaussian likelihood (pre-sample MA errors set
to zero) and the priors

    alpha ~ Normal(0, 2.5),  beta_i ~ Normal(0, 0.5),  phi_j ~ Normal(0, 0.5),
    sigma ~ half-Student-t(3, 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .corpus import TrainingWindow, from_log_incidence
from .forecast import HORIZON, ForecastDraws, check_horizon, round_counts
from .samplers import ChainSpec, PosteriorDraws, adaptive_metropolis, rhat, select_draws

PERIOD = 7
MIN_POINTS = 15


@dataclass(frozen=True)
class SarimaOrder:
    p: int = 1
    d: int = 0
    q: int = 1

    def __post_init__(self):
        for name in ("p", "d", "q"):
            if getattr(self, name) not in (0, 1, 2):
                raise ValueError(f"{name} must be 0, 1 or 2")

    @property
    def names(self) -> list[str]:
        return (
            ["alpha"]
            + [f"beta[{i}]" for i in range(self.p)]
            + [f"phi[{j}]" for j in range(self.q)]
            + ["sigma"]
        )


def seasonal_difference(y, period: int = PERIOD) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if len(y) <= period:
        raise ValueError(f"need more than {period} values to difference")
    return y[period:] - y[:-period]


def undo_seasonal_difference(dy, head, period: int = PERIOD) -> np.ndarray:
    """Rebuild a series from its first ``period`` values and seasonal differences."""
    head = np.asarray(head, dtype=float)
    out = np.empty(len(head) + len(dy))
    out[: len(head)] = head
    for i, v in enumerate(np.asarray(dy, float)):
        out[len(head) + i] = v + out[i + len(head) - period]
    return out


@numba.njit
def _in_unit_region(c1, c2):
    # roots of 1 - c1 z - c2 z^2 lie outside the unit circle
    return c1 + c2 < 1.0 and c2 - c1 < 1.0 and abs(c2) < 1.0


@numba.njit
def _sarima_log_posterior(theta, x, p, q):
    alpha = theta[0]
    log_sig = theta[1 + p + q]
    if log_sig < -12.0 or log_sig > 5.0:
        return -np.inf
    b1 = theta[1] if p > 0 else 0.0
    b2 = theta[2] if p > 1 else 0.0
    f1 = theta[1 + p] if q > 0 else 0.0
    f2 = theta[2 + p] if q > 1 else 0.0
    if not _in_unit_region(b1, b2) or not _in_unit_region(-f1, -f2):
        return -np.inf
    sig = math.exp(log_sig)
    lp = -0.5 * (alpha / 2.5) ** 2
    for i in range(1, 1 + p + q):
        lp += -0.5 * (theta[i] / 0.5) ** 2
    lp += -2.0 * math.log1p(sig * sig / 3.0) + log_sig
    n = len(x)
    e1 = 0.0
    e2 = 0.0
    ss = 0.0
    for t in range(p, n):
        pred = alpha
        if p > 0:
            pred += b1 * x[t - 1]
        if p > 1:
            pred += b2 * x[t - 2]
        pred += f1 * e1 + f2 * e2
        e = x[t] - pred
        ss += e * e
        e2 = e1
        e1 = e
    m = n - p
    return lp - 0.5 * ss / (sig * sig) - m * log_sig


def _differenced(y, d: int) -> list[np.ndarray]:
    levels = [seasonal_difference(y)]
    for _ in range(d):
        levels.append(np.diff(levels[-1]))
    return levels


def fit_sarima(
    window: TrainingWindow,
    order: SarimaOrder = SarimaOrder(),
    spec: ChainSpec = ChainSpec(),
    rng: np.random.Generator | None = None,
) -> PosteriorDraws:
    rng = np.random.default_rng() if rng is None else rng
    x = _differenced(window.log_values, order.d)[-1]
    return fit_arma(x, order, spec, rng)


def fit_arma(x, order: SarimaOrder, spec: ChainSpec, rng: np.random.Generator) -> PosteriorDraws:
    """Posterior of the ARMA part for an already differenced series ``x``."""
    x = np.asarray(x, dtype=float)
    if len(x) - order.p < MIN_POINTS:
        raise ValueError(f"only {len(x)} usable points after differencing; need {MIN_POINTS}")
    sd = max(float(np.std(x)), 1e-3)
    init = np.zeros(2 + order.p + order.q)
    init[0] = float(np.mean(x))
    init[-1] = math.log(sd)
    scales = np.r_[0.1 * sd, np.full(order.p + order.q, 0.1), 0.1]
    fit = adaptive_metropolis(
        _sarima_log_posterior, init, spec, rng, args=(x, order.p, order.q), init_scale=scales
    )
    draws = fit.draws.copy()
    draws[:, -1] = np.exp(draws[:, -1])
    per_chain = draws.reshape(fit.chains, -1, draws.shape[1])
    rh = np.array([rhat(per_chain[:, :, j]) for j in range(draws.shape[1])])
    return PosteriorDraws(
        order.names, draws, fit.acceptance_rate, rh, chains=fit.chains, info={"order": order}
    )


def _residuals(x, alpha, beta, phi):
    """Conditional one-step residuals for each draw, shape (D, n)."""
    d, n = len(alpha), len(x)
    p, q = beta.shape[1], phi.shape[1]
    e = np.zeros((d, n))
    for t in range(p, n):
        pred = alpha.copy()
        for i in range(p):
            pred += beta[:, i] * x[t - 1 - i]
        for j in range(q):
            if t - 1 - j >= 0:
                pred += phi[:, j] * e[:, t - 1 - j]
        e[:, t] = x[t] - pred
    return e


def forecast_sarima(
    fit: PosteriorDraws,
    window: TrainingWindow,
    horizon: int = HORIZON,
    rng: np.random.Generator | None = None,
    n_draws: int | None = None,
    model_id: str = "sarima",
) -> ForecastDraws:
    """Simulate the ARMA recursion forward and undo both differencing steps."""
    check_horizon(horizon)
    rng = np.random.default_rng() if rng is None else rng
    order: SarimaOrder = fit.info.get("order", SarimaOrder())
    n_avail = fit.draws.shape[0]
    idx = select_draws(n_avail if n_draws is None else n_draws, n_avail, rng)
    alpha = fit["alpha"][idx]
    beta = fit.columns("beta")[idx]
    phi = fit.columns("phi")[idx]
    sig = fit["sigma"][idx]
    d = len(idx)

    y = window.log_values
    levels = _differenced(y, order.d)
    x = levels[-1]
    e = _residuals(x, alpha, beta, phi)
    p, q = order.p, order.q
    xs = np.concatenate([np.broadcast_to(x, (d, len(x))), np.zeros((d, horizon))], axis=1)
    es = np.concatenate([e, np.zeros((d, horizon))], axis=1)
    innov = sig[:, None] * rng.standard_normal((d, horizon))
    n = len(x)
    for h in range(horizon):
        t = n + h
        val = alpha + innov[:, h]
        for i in range(p):
            val = val + beta[:, i] * xs[:, t - 1 - i]
        for j in range(q):
            val = val + phi[:, j] * es[:, t - 1 - j]
        xs[:, t] = val
        es[:, t] = innov[:, h]

    fut = xs[:, n:]
    for lvl in range(order.d - 1, -1, -1):
        fut = levels[lvl][-1] + np.cumsum(fut, axis=1)
    y_ext = np.concatenate([np.broadcast_to(y, (d, len(y))), np.zeros((d, horizon))], axis=1)
    m = len(y)
    for h in range(horizon):
        y_ext[:, m + h] = fut[:, h] + y_ext[:, m + h - PERIOD]
    counts = from_log_incidence(y_ext[:, m:], window.population, window.log_offset)
    return ForecastDraws(model_id, window.region_id, window.origin, round_counts(counts))

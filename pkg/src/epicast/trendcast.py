"""Piecewise-linear trend with Laplace-prior changepoints plus weekly seasonality.

Works on log incidence. As in the reference decomposition, time is rescaled
to [0, 1] over the training window and the response is divided by its
absolute maximum, so the Laplace scale ``tau`` is unit-free.

Trend with changepoints ``s_j`` and rate changes ``delta_j``::

    g(t) = (k + sum_{s_j <= t} delta_j) * t + (m - sum_{s_j <= t} s_j * delta_j)

which is continuous at every ``s_j``.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .corpus import TrainingWindow, from_log_incidence
from .forecast import HORIZON, ForecastDraws, check_horizon, round_counts
from .samplers import ChainSpec, PosteriorDraws, adaptive_metropolis, rhat, select_draws

DEFAULT_TAU = 0.45
DEFAULT_CHANGEPOINTS = 10
CHANGEPOINT_RANGE = 0.8
FOURIER_ORDER = 3
PERIOD = 7.0


def changepoint_times(n: int, n_changepoints: int) -> np.ndarray:
    """Scaled times of changepoints spread over the first 80% of ``n`` days."""
    if n_changepoints == 0:
        return np.empty(0)
    last = int(math.floor(CHANGEPOINT_RANGE * (n - 1)))
    idx = np.linspace(0, last, n_changepoints + 1).round().astype(int)[1:]
    return idx / (n - 1)


def fourier_features(days, order: int = FOURIER_ORDER, period: float = PERIOD) -> np.ndarray:
    days = np.asarray(days, dtype=float)
    cols = []
    for k in range(1, order + 1):
        arg = 2.0 * np.pi * k * days / period
        cols += [np.sin(arg), np.cos(arg)]
    return np.column_stack(cols)


def trend(t, k, m, s, delta) -> np.ndarray:
    """Piecewise-linear trend at scaled times ``t`` for one parameter set."""
    t = np.asarray(t, dtype=float)
    a = (t[:, None] >= s[None, :]).astype(float)
    return (k + a @ delta) * t + (m + a @ (-s * delta))


def knots(s) -> np.ndarray:
    return np.concatenate([[0.0], np.asarray(s, float), [1.0]])


def hat_basis(t, u) -> np.ndarray:
    """Piecewise-linear interpolation weights of times ``t`` on knots ``u``.

    Times past the last knot extrapolate along the final segment.
    """
    t = np.asarray(t, dtype=float)
    basis = np.zeros((len(t), len(u)))
    seg = np.clip(np.searchsorted(u, t, side="right") - 1, 0, len(u) - 2)
    frac = (t - u[seg]) / (u[seg + 1] - u[seg])
    rows = np.arange(len(t))
    basis[rows, seg] = 1.0 - frac
    basis[rows, seg + 1] = frac
    return basis


def knot_values_to_params(v, u):
    """Map knot values to (k, m, delta); works row-wise on a (D, J+2) array."""
    v = np.atleast_2d(v)
    slopes = np.diff(v, axis=1) / np.diff(u)
    return slopes[:, 0], v[:, 0], np.diff(slopes, axis=1)


@numba.njit
def _trend_log_posterior(theta, y, basis, feats, widths, tau):
    n = len(y)
    n_k = basis.shape[1]
    n_f = feats.shape[1]
    log_sig = theta[n_k + n_f]
    if log_sig < -14.0 or log_sig > 3.0:
        return -np.inf
    sig = math.exp(log_sig)
    prev = (theta[1] - theta[0]) / widths[0]
    lp = -0.5 * (prev / 5.0) ** 2 - 0.5 * (theta[0] / 5.0) ** 2
    for j in range(1, n_k - 1):
        slope = (theta[j + 1] - theta[j]) / widths[j]
        lp -= abs(slope - prev) / tau
        prev = slope
    for i in range(n_f):
        lp += -0.5 * (theta[n_k + i] / 10.0) ** 2
    lp += -2.0 * math.log1p(sig * sig / 3.0) + log_sig
    ss = 0.0
    for r in range(n):
        mu = 0.0
        for j in range(n_k):
            mu += basis[r, j] * theta[j]
        for i in range(n_f):
            mu += theta[n_k + i] * feats[r, i]
        e = y[r] - mu
        ss += e * e
    return lp - 0.5 * ss / (sig * sig) - n * log_sig


def _names(n_cp: int) -> list[str]:
    return (
        ["k", "m"]
        + [f"delta[{j}]" for j in range(n_cp)]
        + [f"beta[{i}]" for i in range(2 * FOURIER_ORDER)]
        + ["sigma"]
    )


def fit_trend(
    window: TrainingWindow,
    tau: float = DEFAULT_TAU,
    n_changepoints: int = DEFAULT_CHANGEPOINTS,
    spec: ChainSpec = ChainSpec(),
    rng: np.random.Generator | None = None,
) -> PosteriorDraws:
    """Posterior draws in scaled units; ``info`` holds the scalings and design."""
    return fit_trend_values(window.log_values, tau, n_changepoints, spec, rng)


def fit_trend_values(y, tau, n_changepoints, spec=ChainSpec(), rng=None) -> PosteriorDraws:
    """Fit on a raw log-scale series.

    Sampling runs on the trend's values at the knots (start, changepoints,
    end), an invertible linear reparameterization of (k, m, delta) whose
    coordinates are only locally coupled. Draws are reported as (k, m, delta).
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    rng = np.random.default_rng() if rng is None else rng
    y = np.asarray(y, dtype=float)
    n = len(y)
    y_scale = max(float(np.max(np.abs(y))), 1e-8)
    ys = y / y_scale
    days = np.arange(n, dtype=float)
    t = days / (n - 1)
    s = changepoint_times(n, n_changepoints)
    u = knots(s)
    if np.any(np.diff(u) <= 0):
        raise ValueError(f"{n_changepoints} changepoints do not fit a {n}-day window")
    basis = hat_basis(t, u)
    feats = fourier_features(days)

    # least-squares start on a single straight line
    design = np.column_stack([t, np.ones(n), feats])
    coef, *_ = np.linalg.lstsq(design, ys, rcond=None)
    resid = ys - design @ coef
    sig0 = max(float(np.std(resid)), 1e-4)
    init = np.r_[coef[1] + coef[0] * u, coef[2:], math.log(sig0)]
    scales = np.r_[np.full(len(u), 0.3 * sig0), np.full(feats.shape[1], 0.1 * sig0), 0.1]
    fit = adaptive_metropolis(
        _trend_log_posterior, init, spec, rng,
        args=(ys, basis, feats, np.diff(u), float(tau)), init_scale=scales,
    )
    th = fit.draws
    k, m, delta = knot_values_to_params(th[:, : len(u)], u)
    draws = np.column_stack([k, m, delta, th[:, len(u) : -1], np.exp(th[:, -1])])
    per_chain = draws.reshape(fit.chains, -1, draws.shape[1])
    rh = np.array([rhat(per_chain[:, :, j]) for j in range(draws.shape[1])])
    info = {"y_scale": y_scale, "n": n, "changepoints": s, "tau": tau}
    return PosteriorDraws(_names(n_changepoints), draws, fit.acceptance_rate, rh, fit.chains, info)


def slope_per_day(fit: PosteriorDraws) -> np.ndarray:
    """Base growth rate ``k`` in log-incidence units per day."""
    return fit["k"] * fit.info["y_scale"] / (fit.info["n"] - 1)


def forecast_trend(
    fit: PosteriorDraws,
    window: TrainingWindow,
    horizon: int = HORIZON,
    rng: np.random.Generator | None = None,
    n_draws: int | None = None,
    model_id: str = "trend",
) -> ForecastDraws:
    y = forecast_trend_values(fit, horizon, rng, n_draws)
    counts = from_log_incidence(y, window.population, window.log_offset)
    return ForecastDraws(model_id, window.region_id, window.origin, round_counts(counts))


def forecast_trend_values(fit, horizon=HORIZON, rng=None, n_draws=None) -> np.ndarray:
    """Log-scale predictive paths, shape (D, horizon).

    Each draw continues at its final rate; new changepoints arrive as a
    Poisson process with the training changepoint density and Laplace
    magnitudes scaled by the draw's mean absolute rate change.
    """
    check_horizon(horizon)
    rng = np.random.default_rng() if rng is None else rng
    n_avail = fit.draws.shape[0]
    idx = select_draws(n_avail if n_draws is None else n_draws, n_avail, rng)
    d = len(idx)
    n, y_scale = fit.info["n"], fit.info["y_scale"]
    s = fit.info["changepoints"]
    k, m = fit["k"][idx], fit["m"][idx]
    delta = fit.columns("delta")[idx]
    beta = fit.columns("beta")[idx]
    sig = fit["sigma"][idx]

    dt = 1.0 / (n - 1)
    rate_end = k + delta.sum(axis=1)
    level_end = rate_end * 1.0 + (m - delta @ s)

    n_cp = len(s)
    lam = np.abs(delta).mean(axis=1) if n_cp else np.zeros(d)
    arrivals = rng.poisson(n_cp * dt, size=(d, horizon)) if n_cp else np.zeros((d, horizon), int)
    jumps = np.zeros((d, horizon))
    hit = arrivals > 0
    if hit.any():
        # sum of c Laplace(0, b) draws, one per arrival
        counts = arrivals[hit]
        scale = np.broadcast_to(lam[:, None], (d, horizon))[hit]
        total = np.zeros(counts.shape)
        for c in range(1, counts.max() + 1):
            sel = counts >= c
            total[sel] += rng.laplace(0.0, 1.0, size=int(sel.sum())) * scale[sel]
        jumps[hit] = total
    rates = rate_end[:, None] + np.cumsum(jumps, axis=1)
    trend_path = level_end[:, None] + np.cumsum(rates * dt, axis=1)
    days = np.arange(n, n + horizon, dtype=float)
    season = beta @ fourier_features(days).T
    noise = sig[:, None] * rng.standard_normal((d, horizon))
    return (trend_path + season + noise) * y_scale

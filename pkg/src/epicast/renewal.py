"""Renewal-equation forecasters.

Two models share the infectiousness machinery here:

* ``cori``: reproduction number estimated over a trailing window with the
  conjugate Gamma update, uncertain generation interval, Poisson projection
  with R frozen over the horizon.
* ``renewal-rw``: weekly random walk on log R, negative-binomial observations
  and day-of-week effects, fitted by MCMC.

Confirmed cases are treated as infections shifted by a constant delay.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import special

from .corpus import TrainingWindow
from .forecast import DEFAULT_DRAWS, HORIZON, ForecastDraws, check_horizon
from .samplers import ChainSpec, PosteriorDraws, adaptive_metropolis, rhat, select_draws

Z95 = 1.959963984540054

R_PRIOR_MEAN = 1.10
R_PRIOR_SD = 0.04


@dataclass(frozen=True)
class GenerationInterval:
    """Uncertain Gamma generation interval, hyperpriors from 95% intervals."""

    mean: float = 4.2
    mean_interval: tuple = (3.3, 5.3)
    sd: float = 4.9
    sd_interval: tuple = (3.0, 8.3)
    max_days: int = 21
    mean_sd: float | None = None
    sd_sd: float | None = None
    floor: float = 0.1

    @property
    def mean_uncertainty(self) -> float:
        if self.mean_sd is not None:
            return self.mean_sd
        lo, hi = self.mean_interval
        return (hi - lo) / (2 * Z95)

    @property
    def sd_uncertainty(self) -> float:
        if self.sd_sd is not None:
            return self.sd_sd
        lo, hi = self.sd_interval
        return (hi - lo) / (2 * Z95)

    @property
    def w(self) -> np.ndarray:
        """Discretization at the central mean and sd."""
        return discretize_gi(self.mean, self.sd, self.max_days)


def gamma_shape_scale(mean, sd):
    mean, sd = np.asarray(mean, float), np.asarray(sd, float)
    return mean**2 / sd**2, sd**2 / mean


def discretize_gi(mean, sd, max_days: int = 21) -> np.ndarray:
    """Moment-matched Gamma generation interval on lags ``1..max_days``.

    Lag ``j`` receives the mass of ``[j - 1/2, j + 1/2)``; lag 1 also absorbs
    ``[0, 1/2)`` since same-day transmission is excluded. Mass past the last
    lag is dropped and the vector renormalized. ``mean`` and ``sd`` may be
    arrays of equal shape, giving one row per pair.
    """
    mean, sd = np.asarray(mean, float), np.asarray(sd, float)
    if np.any(mean <= 0) or np.any(sd <= 0):
        raise ValueError("generation interval mean and sd must be positive")
    if max_days < 1:
        raise ValueError("max_days must be at least 1")
    shape, scale = gamma_shape_scale(mean, sd)
    edges = np.concatenate([[0.0], np.arange(1, max_days + 1) + 0.5])
    cdf = special.gammainc(shape[..., None], edges / scale[..., None])
    w = np.diff(cdf, axis=-1)
    total = w.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise ValueError("generation interval puts no mass on lags 1..max_days")
    return w / total


def _truncated_normal(loc, scale, floor, n, rng):
    x = loc + scale * rng.standard_normal(n)
    bad = x < floor
    while np.any(bad):
        x[bad] = loc + scale * rng.standard_normal(int(bad.sum()))
        bad = x < floor
    return x


def sample_gi(gi: GenerationInterval, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` discretized generation intervals, shape ``(n, gi.max_days)``."""
    if n == 0:
        return np.empty((0, gi.max_days))
    means = _truncated_normal(gi.mean, gi.mean_uncertainty, gi.floor, n, rng)
    sds = _truncated_normal(gi.sd, gi.sd_uncertainty, gi.floor, n, rng)
    return discretize_gi(means, sds, gi.max_days)


def total_infectiousness(cases, w, t: int) -> float:
    """``sum_{j=1}^{min(t, len(w))} w[j-1] * cases[t-j]``."""
    if t < 1:
        raise ValueError("total infectiousness needs at least one day of history")
    cases = np.asarray(cases, float)
    w = np.asarray(w, float)
    k = min(t, len(w))
    return float(np.dot(w[:k], cases[t - 1 :: -1][:k])) if k else 0.0


def lag_matrix(cases, n_lags: int, length: int | None = None) -> np.ndarray:
    """``M[t, j] = cases[t - 1 - j]`` (zero before the series start)."""
    cases = np.asarray(cases, float)
    n = len(cases) if length is None else length
    m = np.zeros((n, n_lags))
    for j in range(n_lags):
        m[j + 1 :, j] = cases[: max(n - j - 1, 0)]
    return m


def infectiousness(cases, w) -> np.ndarray:
    """Total infectiousness for every day (``Λ_0 = 0``).

    ``w`` may be a single vector, giving shape ``(n,)``, or a ``(D, L)`` batch
    giving ``(n, D)``.
    """
    w = np.asarray(w, float)
    m = lag_matrix(cases, w.shape[-1])
    return m @ w.T


@dataclass(frozen=True)
class RPosterior:
    shape: float
    rate: float
    window: tuple  # (first, last) day index, inclusive

    @property
    def mean(self) -> float:
        return self.shape / self.rate

    @property
    def sd(self) -> float:
        return math.sqrt(self.shape) / self.rate

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.gamma(self.shape, 1.0 / self.rate, size=n)


def gamma_prior(mean: float = R_PRIOR_MEAN, sd: float = R_PRIOR_SD) -> tuple[float, float]:
    """(shape, rate) of the Gamma with the given mean and sd."""
    return (mean / sd) ** 2, mean / sd**2


def cori_posterior(
    cases,
    w,
    tau: int = 7,
    prior: tuple[float, float] = (R_PRIOR_MEAN, R_PRIOR_SD),
    end: int | None = None,
) -> RPosterior:
    """Conjugate posterior of R over the ``tau`` days ending at index ``end``."""
    cases = np.asarray(cases, float)
    if tau < 1:
        raise ValueError("tau must be at least 1")
    end = len(cases) - 1 if end is None else end
    start = end - tau + 1
    if start < 1 or end >= len(cases):
        raise ValueError(f"window [{start}, {end}] does not fit the {len(cases)}-day history")
    lam = infectiousness(cases, w)
    a, b = gamma_prior(*prior)
    return RPosterior(
        shape=a + cases[start : end + 1].sum(),
        rate=b + lam[start : end + 1].sum(),
        window=(start, end),
    )


def project_poisson(cases, r_draws, w_draws, horizon: int, rng: np.random.Generator) -> np.ndarray:
    """Poisson renewal projection, one trajectory per (R, w) pair.

    Returns a ``(D, horizon)`` integer matrix. Projected counts feed back into
    the infectiousness of later days; R is constant over the horizon.
    """
    check_horizon(horizon)
    cases = np.asarray(cases, float)
    r = np.asarray(r_draws, float)
    w = np.atleast_2d(np.asarray(w_draws, float))
    d = len(r)
    if w.shape[0] == 1 and d != 1:
        w = np.broadcast_to(w, (d, w.shape[1]))
    if w.shape[0] != d:
        raise ValueError("r_draws and w_draws must pair up")
    n, n_lags = len(cases), w.shape[1]
    hist = np.zeros((d, n + horizon))
    hist[:, :n] = cases
    for h in range(horizon):
        t = n + h
        k = min(t, n_lags)
        lam = np.einsum("dj,dj->d", w[:, :k], hist[:, t - k : t][:, ::-1])
        hist[:, t] = rng.poisson(r * lam)
    return hist[:, n:].astype(np.int64)


def forecast_cori(
    window: TrainingWindow,
    tau: int = 7,
    gi: GenerationInterval = GenerationInterval(),
    n_draws: int = DEFAULT_DRAWS,
    rng: np.random.Generator | None = None,
    horizon: int = HORIZON,
    model_id: str = "cori",
) -> ForecastDraws:
    """Pair each sampled generation interval with one posterior draw of R and project."""
    rng = np.random.default_rng() if rng is None else rng
    cases = window.values.astype(float)
    w_draws = sample_gi(gi, n_draws, rng)
    lam = infectiousness(cases, w_draws)  # (n, D)
    n = len(cases)
    if n - tau < 1:
        raise ValueError(f"tau={tau} does not fit a {n}-day window")
    a, b = gamma_prior()
    shape = a + cases[n - tau :].sum()
    rate = b + lam[n - tau :].sum(axis=0)
    r = rng.gamma(shape, 1.0 / rate)
    draws = project_poisson(cases, r, w_draws, horizon, rng)
    return ForecastDraws(model_id, window.region_id, window.origin, draws)


# --- weekly random-walk model ----------------------------------------------

N_BLOCKS = 8
BURN_IN_DAYS = 7
_U_BOUNDS = (-8.0, 4.0)  # u = log(1 / sqrt(phi))
_LOGSIG_BOUNDS = (-12.0, 2.0)


def _lognormal_r0(mean=R_PRIOR_MEAN, sd=R_PRIOR_SD):
    s2 = math.log1p((sd / mean) ** 2)
    return math.log(mean) - 0.5 * s2, math.sqrt(s2)


@numba.njit
def _rw_log_posterior(theta, y, lgy1, lam, block, wday, use, r_loc, r_scale, wday_sd, sig_sd, inv_phi_sd):
    nb = 8
    u = theta[nb]
    eff6 = theta[nb + 1 : nb + 7]
    log_sig = theta[nb + 7]
    if u < -8.0 or u > 4.0 or log_sig < -12.0 or log_sig > 2.0:
        return -np.inf
    if abs(theta[0]) > 5.0:
        return -np.inf
    sig = math.exp(log_sig)
    lp = -0.5 * ((theta[0] - r_loc) / r_scale) ** 2
    lp += -0.5 * (sig / sig_sd) ** 2 + log_sig
    logr = np.empty(nb)
    logr[0] = theta[0]
    for k in range(1, nb):
        lp += -0.5 * theta[k] ** 2
        logr[k] = logr[k - 1] + sig * theta[k]
    inv = math.exp(u)
    lp += -0.5 * (inv / inv_phi_sd) ** 2 + u
    phi = math.exp(-2.0 * u)
    eff = np.empty(7)
    s = 0.0
    for i in range(6):
        eff[i] = eff6[i]
        s += eff6[i]
        lp += -0.5 * (eff6[i] / wday_sd) ** 2
    eff[6] = -s
    lg_phi = math.lgamma(phi)
    for t in range(len(y)):
        if not use[t]:
            continue
        mu = math.exp(eff[wday[t]] + logr[block[t]]) * lam[t]
        lp += (
            math.lgamma(y[t] + phi)
            - lg_phi
            - lgy1[t]
            + phi * math.log(phi / (phi + mu))
            + y[t] * math.log(mu / (phi + mu))
        )
    return lp


def _weekdays(dates) -> np.ndarray:
    # 1970-01-01 was a Thursday; Monday == 0
    return ((np.asarray(dates, dtype="datetime64[D]").astype(np.int64) + 3) % 7).astype(np.int64)


def _week_blocks(n: int) -> np.ndarray:
    """Block index per day; block ``N_BLOCKS - 1`` ends at the last day."""
    back = (n - 1 - np.arange(n)) // 7
    return np.clip(N_BLOCKS - 1 - back, 0, N_BLOCKS - 1).astype(np.int64)


def _window_infectiousness(cases, w) -> np.ndarray:
    # days with truncated history are rescaled by the covered generation-interval mass
    lam = infectiousness(cases, w)
    covered = np.cumsum(w)[np.minimum(np.arange(len(cases)), len(w)) - 1]
    covered[0] = 1.0
    return lam / covered


def fit_renewal_rw(
    window: TrainingWindow,
    gi: GenerationInterval = GenerationInterval(),
    spec: ChainSpec = ChainSpec(),
    rng: np.random.Generator | None = None,
    rw_sd: float = 0.2,
    wday_sd: float = 0.2,
    inv_phi_sd: float = 10.0,
) -> PosteriorDraws:
    """Posterior of weekly log R, NB dispersion, weekday effects and walk sd.

    The generation interval is fixed at its central discretization. Days in
    the first week of the window, or with zero infectiousness, do not enter
    the likelihood.
    """
    rng = np.random.default_rng() if rng is None else rng
    y = window.values.astype(float)
    n = len(y)
    w = gi.w
    lam = _window_infectiousness(y, w)
    block = _week_blocks(n)
    wday = _weekdays(window.dates)
    use = (np.arange(n) >= BURN_IN_DAYS) & (lam > 0)
    lgy1 = special.gammaln(y + 1.0)
    r_loc, r_scale = _lognormal_r0()

    init = np.zeros(N_BLOCKS + 8)
    if use.any() and y[use].sum() > 0:
        init[0] = np.clip(np.log(y[use].sum() / lam[use].sum()), -2.0, 2.0)
    else:
        init[0] = r_loc
    init[N_BLOCKS] = math.log(1 / math.sqrt(20.0))
    init[N_BLOCKS + 7] = math.log(0.05)
    scales = np.r_[0.03, np.full(N_BLOCKS - 1, 0.5), 0.1, np.full(6, 0.03), 0.3]
    args = (y, lgy1, lam, block, wday, use, r_loc, r_scale, wday_sd, rw_sd, inv_phi_sd)
    fit = adaptive_metropolis(_rw_log_posterior, init, spec, rng, args=args, init_scale=scales)

    th = fit.draws
    sig = np.exp(th[:, N_BLOCKS + 7])
    logr = th[:, [0]] + np.concatenate(
        [np.zeros((len(th), 1)), np.cumsum(sig[:, None] * th[:, 1:N_BLOCKS], axis=1)], axis=1
    )
    eff6 = th[:, N_BLOCKS + 1 : N_BLOCKS + 7]
    draws = np.column_stack(
        [logr, np.exp(-2.0 * th[:, N_BLOCKS]), eff6, -eff6.sum(axis=1), sig]
    )
    names = (
        [f"logR[{k}]" for k in range(N_BLOCKS)]
        + ["phi"]
        + [f"wday[{i}]" for i in range(7)]
        + ["sigma_rw"]
    )
    per_chain = draws.reshape(fit.chains, -1, draws.shape[1])
    rh = np.array([rhat(per_chain[:, :, j]) for j in range(draws.shape[1])])
    return PosteriorDraws(
        names, draws, fit.acceptance_rate, rh, chains=fit.chains, info={"w": w}
    )


def forecast_renewal_rw(
    fit: PosteriorDraws,
    window: TrainingWindow,
    gi: GenerationInterval = GenerationInterval(),
    horizon: int = HORIZON,
    rng: np.random.Generator | None = None,
    n_draws: int | None = None,
    model_id: str = "renewal-rw",
) -> ForecastDraws:
    """Continue the log-R walk week by week and simulate NB counts with feedback."""
    check_horizon(horizon)
    rng = np.random.default_rng() if rng is None else rng
    n_avail = fit.draws.shape[0]
    idx = select_draws(n_avail if n_draws is None else n_draws, n_avail, rng)
    d = len(idx)
    logr = fit.columns("logR")[idx]
    phi = fit["phi"][idx]
    eff = fit.columns("wday")[idx]
    sig = fit["sigma_rw"][idx]
    w = fit.info.get("w", gi.w)

    n_weeks = -(-horizon // 7)
    steps = sig[:, None] * rng.standard_normal((d, n_weeks))
    future_logr = logr[:, -1][:, None] + np.cumsum(steps, axis=1)

    cases = window.values.astype(float)
    n, n_lags = len(cases), len(w)
    first_wday = _weekdays([window.dates[-1]])[0]
    hist = np.zeros((d, n + horizon))
    hist[:, :n] = cases
    rows = np.arange(d)
    for h in range(horizon):
        t = n + h
        k = min(t, n_lags)
        lam = hist[:, t - k : t][:, ::-1] @ w[:k]
        wd = (first_wday + h + 1) % 7
        mean = np.exp(eff[rows, wd] + future_logr[:, h // 7]) * lam
        p = phi / (phi + mean)
        hist[:, t] = rng.negative_binomial(phi, np.where(mean > 0, p, 1.0))
    return ForecastDraws(model_id, window.region_id, window.origin, hist[:, n:].astype(np.int64))

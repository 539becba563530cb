"""Zero-mean Gaussian process on centered log incidence.

Covariance: long squared-exponential (trend) + short squared-exponential
(short-term variation) + weekly periodic + white noise. Length scales and the
period are fixed; the three amplitudes and the noise sd are sampled.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numba
import numpy as np
from scipy import linalg

from .corpus import TrainingWindow, from_log_incidence
from .forecast import HORIZON, ForecastDraws, check_horizon, round_counts
from .samplers import ChainSpec, PosteriorDraws, adaptive_metropolis, rhat, select_draws

log = logging.getLogger(__name__)

HYPER_NAMES = ("alpha_long", "alpha_short", "alpha_week", "sigma")
MIN_SIGMA = 1e-6
JITTER_LADDER = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


class CholeskyError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class KernelConfig:
    rho_long: float = 56.0
    rho_short: float = 7.0
    rho_week: float = 1.0
    period: float = 7.0
    # (nu, scale) of the half-Student-t priors on the amplitudes and the noise sd
    prior_long: tuple = (3.0, 5.0)
    prior_short: tuple = (7.0, 2.0)
    prior_week: tuple = (5.0, 2.0)
    prior_sigma: tuple = (3.0, 1.0)

    def __post_init__(self):
        if min(self.rho_long, self.rho_short, self.rho_week, self.period) <= 0:
            raise ValueError("length scales and period must be positive")


def kernel_se(ti, tj, alpha, rho):
    """Squared-exponential covariance ``alpha^2 exp(-(ti - tj)^2 / (2 rho^2))``."""
    d = np.subtract(ti, tj)
    return alpha**2 * np.exp(-(d**2) / (2.0 * rho**2))


def kernel_pe(ti, tj, alpha, rho, p):
    """Periodic covariance ``alpha^2 exp(-2 sin^2(pi |ti - tj| / p) / (2 rho^2))``."""
    d = np.abs(np.subtract(ti, tj))
    return alpha**2 * np.exp(-2.0 * np.sin(np.pi * d / p) ** 2 / (2.0 * rho**2))


def unit_kernels(a, b, config: KernelConfig) -> np.ndarray:
    """The three kernels with unit amplitude, stacked: shape (3, len(a), len(b))."""
    a = np.asarray(a, float)[:, None]
    b = np.asarray(b, float)[None, :]
    return np.stack(
        [
            kernel_se(a, b, 1.0, config.rho_long),
            kernel_se(a, b, 1.0, config.rho_short),
            kernel_pe(a, b, 1.0, config.rho_week, config.period),
        ]
    )


def build_covariance(times, hyper, config: KernelConfig = KernelConfig()) -> np.ndarray:
    """Training covariance; ``hyper`` = (alpha_long, alpha_short, alpha_week, sigma)."""
    a_l, a_s, a_w, sig = hyper
    base = unit_kernels(times, times, config)
    k = a_l**2 * base[0] + a_s**2 * base[1] + a_w**2 * base[2]
    k[np.diag_indices_from(k)] += sig**2
    return k


def cholesky(k: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, adding diagonal jitter from 1e-8 up to 1e-4 if needed."""
    for jitter in JITTER_LADDER:
        try:
            return linalg.cholesky(k + jitter * np.eye(len(k)), lower=True)
        except linalg.LinAlgError:
            continue
    raise CholeskyError("covariance is not positive definite even with 1e-4 jitter")


@numba.njit
def _half_t(x, nu, scale):
    return -0.5 * (nu + 1.0) * math.log1p((x / scale) ** 2 / nu)


@numba.njit
def _gp_log_posterior(theta, y, k_long, k_short, k_week, priors):
    n = len(y)
    if theta[3] < math.log(1e-6) or theta[3] > 5.0:
        return -np.inf
    for i in range(3):
        if theta[i] < -15.0 or theta[i] > 8.0:
            return -np.inf
    a_l = math.exp(theta[0])
    a_s = math.exp(theta[1])
    a_w = math.exp(theta[2])
    sig = math.exp(theta[3])
    lp = (
        _half_t(a_l, priors[0, 0], priors[0, 1])
        + _half_t(a_s, priors[1, 0], priors[1, 1])
        + _half_t(a_w, priors[2, 0], priors[2, 1])
        + _half_t(sig, priors[3, 0], priors[3, 1])
        + theta[0] + theta[1] + theta[2] + theta[3]
    )
    l = np.zeros((n, n))
    for j in range(n):
        s = a_l * a_l * k_long[j, j] + a_s * a_s * k_short[j, j] + a_w * a_w * k_week[j, j] + sig * sig
        for c in range(j):
            s -= l[j, c] * l[j, c]
        if s <= 0.0:
            return -np.inf
        l[j, j] = math.sqrt(s)
        for i in range(j + 1, n):
            v = a_l * a_l * k_long[i, j] + a_s * a_s * k_short[i, j] + a_w * a_w * k_week[i, j]
            for c in range(j):
                v -= l[i, c] * l[j, c]
            l[i, j] = v / l[j, j]
    # forward solve L z = y
    quad = 0.0
    logdet = 0.0
    z = np.empty(n)
    for i in range(n):
        v = y[i]
        for c in range(i):
            v -= l[i, c] * z[c]
        z[i] = v / l[i, i]
        quad += z[i] * z[i]
        logdet += math.log(l[i, i])
    return lp - 0.5 * quad - logdet - 0.5 * n * math.log(2.0 * math.pi)


@dataclass
class GpFit:
    hyper_draws: np.ndarray  # (retained, 4)
    train_times: np.ndarray
    train_y: np.ndarray  # centered
    y_mean: float
    config: KernelConfig
    rhat: np.ndarray
    acceptance_rate: np.ndarray
    population: int = 100_000
    log_offset: float = 0.01
    region_id: str = ""
    origin: object = None

    def posterior(self) -> PosteriorDraws:
        return PosteriorDraws(
            list(HYPER_NAMES), self.hyper_draws, self.acceptance_rate, self.rhat,
            chains=len(self.acceptance_rate),
        )


def fit_gp(
    window: TrainingWindow,
    config: KernelConfig = KernelConfig(),
    spec: ChainSpec = ChainSpec(),
    rng: np.random.Generator | None = None,
) -> GpFit:
    fit = fit_gp_values(window.log_values, config, spec, rng)
    fit.population = window.population
    fit.log_offset = window.log_offset
    fit.region_id = window.region_id
    fit.origin = window.origin
    return fit


def fit_gp_values(y, config=KernelConfig(), spec=ChainSpec(), rng=None) -> GpFit:
    """Sample amplitudes and noise sd on the log scale (Jacobian included)."""
    rng = np.random.default_rng() if rng is None else rng
    y = np.asarray(y, dtype=float)
    times = np.arange(len(y), dtype=float)
    y_mean = float(np.mean(y))
    yc = y - y_mean
    base = unit_kernels(times, times, config)
    priors = np.array([config.prior_long, config.prior_short, config.prior_week, config.prior_sigma])
    sd = max(float(np.std(yc)), 1e-3)
    init = np.log([sd, 0.5 * sd, 0.3 * sd, max(0.3 * sd, 2 * MIN_SIGMA)])
    draws = adaptive_metropolis(
        _gp_log_posterior, init, spec, rng,
        args=(yc, base[0], base[1], base[2], priors), init_scale=0.3,
    )
    hyper = np.exp(draws.draws)
    if np.median(hyper[:, 3]) < 10 * MIN_SIGMA:
        log.warning("GP noise sd collapsed to its %.0e floor (constant data?)", MIN_SIGMA)
    hyper[:, 3] = np.maximum(hyper[:, 3], MIN_SIGMA)
    per_chain = hyper.reshape(spec.chains, -1, 4)
    rh = np.array([rhat(per_chain[:, :, j]) for j in range(4)])
    return GpFit(hyper, times, yc, y_mean, config, rh, draws.acceptance_rate)


def gp_conditional(
    hyper, train_t, train_y, test_t, config=KernelConfig(), test_noise=True, bases=None
):
    """Mean and covariance of test values given centered training values.

    The training covariance includes the white-noise term; the test
    covariance includes it when ``test_noise`` is true (predicting new
    observations rather than the latent function). ``bases`` optionally
    carries precomputed unit kernels (train-train, test-train, test-test).
    """
    if bases is None:
        bases = (
            unit_kernels(train_t, train_t, config),
            unit_kernels(test_t, train_t, config),
            unit_kernels(test_t, test_t, config),
        )
    base_tt, base_st, base_ss = bases
    a = np.asarray(hyper[:3], float) ** 2
    sig2 = float(hyper[3]) ** 2
    k_tt = np.tensordot(a, base_tt, axes=1)
    k_tt[np.diag_indices_from(k_tt)] += sig2
    k_st = np.tensordot(a, base_st, axes=1)
    k_ss = np.tensordot(a, base_ss, axes=1)
    if test_noise:
        k_ss[np.diag_indices_from(k_ss)] += sig2
    chol = cholesky(k_tt)
    mean = k_st @ linalg.cho_solve((chol, True), np.asarray(train_y, float))
    v = linalg.solve_triangular(chol, k_st.T, lower=True)
    return mean, k_ss - v.T @ v


def forecast_gp_values(fit: GpFit, horizon=HORIZON, rng=None, n_draws=None) -> np.ndarray:
    """One predictive path per selected hyperparameter draw, on the log scale."""
    check_horizon(horizon)
    rng = np.random.default_rng() if rng is None else rng
    n_avail = fit.hyper_draws.shape[0]
    idx = select_draws(n_avail if n_draws is None else n_draws, n_avail, rng)
    n = len(fit.train_times)
    test_t = np.arange(n, n + horizon, dtype=float)
    bases = (
        unit_kernels(fit.train_times, fit.train_times, fit.config),
        unit_kernels(test_t, fit.train_times, fit.config),
        unit_kernels(test_t, test_t, fit.config),
    )
    z = rng.standard_normal((len(idx), horizon))
    out = np.empty((len(idx), horizon))
    cache: dict[int, tuple] = {}
    for r, i in enumerate(idx):
        if i not in cache:
            mean, cov = gp_conditional(
                fit.hyper_draws[i], fit.train_times, fit.train_y, test_t, fit.config, bases=bases
            )
            cache[i] = (mean, cholesky(0.5 * (cov + cov.T)))
        mean, chol_pred = cache[i]
        out[r] = mean + chol_pred @ z[r]
    return out + fit.y_mean


def forecast_gp(
    fit: GpFit,
    horizon: int = HORIZON,
    rng: np.random.Generator | None = None,
    n_draws: int | None = None,
    model_id: str = "gp",
) -> ForecastDraws:
    y = forecast_gp_values(fit, horizon, rng, n_draws)
    counts = from_log_incidence(y, fit.population, fit.log_offset)
    return ForecastDraws(model_id, fit.region_id, fit.origin, round_counts(counts))

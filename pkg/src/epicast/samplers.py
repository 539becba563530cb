"""Random streams, distribution samplers and an adaptive Metropolis sampler.

The Metropolis kernel is written once in plain Python. When the target
log-density is a numba ``@njit`` function the same kernel runs compiled,
which is what makes refitting thousands of models per backtest affordable.
All random variates are drawn up front from a numpy ``Generator`` so both
paths consume identical streams.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np
from numba.core.registry import CPUDispatcher

log = logging.getLogger(__name__)

TARGET_ACCEPT = 0.234


class SamplerError(RuntimeError):
    pass


def seeded_rng(seed: int, stream: Sequence = ()) -> np.random.Generator:
    """Deterministic generator for ``(seed, stream)``.

    ``stream`` is any tuple of printable keys, typically (region, origin, model).
    Distinct tuples map to independent ``SeedSequence`` spawn keys.
    """
    digest = hashlib.sha256("\x1f".join(str(s) for s in stream).encode()).digest()
    key = tuple(int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4))
    ss = np.random.SeedSequence(entropy=int(seed) & (2**64 - 1), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def sample_gamma(shape, rate, n: int, rng: np.random.Generator) -> np.ndarray:
    """Gamma draws with the given shape and rate (mean ``shape / rate``)."""
    shape, rate = np.asarray(shape, float), np.asarray(rate, float)
    if np.any(shape <= 0) or np.any(rate <= 0):
        raise ValueError("gamma shape and rate must be positive")
    return rng.gamma(shape, 1.0 / rate, size=n)


def sample_negbin(mean, dispersion, n, rng: np.random.Generator) -> np.ndarray:
    """Negative-binomial draws with variance ``mean + mean**2 / dispersion``.

    ``mean`` may be an array, in which case ``n`` is the output shape.
    """
    mean, dispersion = np.asarray(mean, float), np.asarray(dispersion, float)
    if np.any(mean <= 0) or np.any(dispersion <= 0):
        raise ValueError("negative-binomial mean and dispersion must be positive")
    return rng.negative_binomial(dispersion, dispersion / (dispersion + mean), size=n)


@dataclass(frozen=True)
class ChainSpec:
    chains: int = 4
    iterations: int = 1000
    warmup: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.chains < 1 or self.iterations < 1:
            raise ValueError("chains and iterations must be positive")
        if not 0 <= self.warmup < self.iterations:
            raise ValueError("warmup must lie in [0, iterations)")

    @property
    def retained(self) -> int:
        return self.chains * (self.iterations - self.warmup)


@dataclass
class PosteriorDraws:
    parameter_names: list[str]
    draws: np.ndarray  # (retained, n_params), chain-major
    acceptance_rate: np.ndarray  # per chain, retained phase
    rhat: np.ndarray  # per parameter
    chains: int = 1
    info: dict = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.draws[:, self.parameter_names.index(name)]

    def columns(self, prefix: str) -> np.ndarray:
        idx = [i for i, n in enumerate(self.parameter_names) if n.startswith(prefix)]
        return self.draws[:, idx]

    def by_chain(self) -> np.ndarray:
        return self.draws.reshape(self.chains, -1, self.draws.shape[1])

    @property
    def max_rhat(self) -> float:
        return float(np.max(self.rhat)) if self.rhat.size else 1.0


def _chain_kernel(logp, theta0, args, scale0, z, u, warmup):
    n_iter, d = z.shape
    theta = theta0.copy()
    scale = scale0.copy()
    lp = logp(theta, *args)
    out = np.empty((n_iter - warmup, d))
    kept_accepts = 0
    accepts = 0
    for it in range(n_iter):
        step = 1.0 / np.sqrt(it + 1.0)
        for i in range(d):
            old = theta[i]
            theta[i] = old + scale[i] * z[it, i]
            lp_new = logp(theta, *args)
            ok = False
            if lp_new == lp_new:  # NaN proposals are rejected
                diff = lp_new - lp
                if diff >= 0.0 or np.log(u[it, i]) < diff:
                    ok = True
            if ok:
                lp = lp_new
                accepts += 1
            else:
                theta[i] = old
            if it < warmup:
                scale[i] *= np.exp(step * ((1.0 if ok else 0.0) - 0.234))
            elif ok:
                kept_accepts += 1
        if it >= warmup:
            out[it - warmup] = theta
    return out, kept_accepts, accepts, scale


_chain_kernel_jit = numba.njit(_chain_kernel)


def _split_chains(chains: np.ndarray) -> np.ndarray:
    n = chains.shape[1] // 2
    if n < 1:
        return chains
    return np.concatenate([chains[:, :n], chains[:, chains.shape[1] - n :]], axis=0)


def rhat(chains: np.ndarray, split: bool = True) -> float:
    """Potential scale reduction for one parameter, ``chains`` shaped (C, N).

    Values are floored at 1. With ``split=False`` identical chains give
    exactly 1 because the between-chain variance vanishes.
    """
    chains = np.asarray(chains, dtype=float)
    if split:
        chains = _split_chains(chains)
    m, n = chains.shape
    if m < 2 or n < 2:
        return 1.0
    w = np.mean(np.var(chains, axis=1, ddof=1))
    b = n * np.var(np.mean(chains, axis=1), ddof=1)
    if w == 0.0:
        return 1.0 if b == 0.0 else float("inf")
    var_hat = (n - 1) / n * w + b / n
    return float(max(1.0, np.sqrt(var_hat / w)))


def adaptive_metropolis(
    log_posterior: Callable,
    init,
    spec: ChainSpec,
    rng: np.random.Generator,
    args: tuple = (),
    names: Sequence[str] | None = None,
    init_scale=0.1,
    init_jitter: float = 0.1,
) -> PosteriorDraws:
    """Component-wise random-walk Metropolis with per-coordinate scale adaptation.

    Each coordinate's proposal sd is tuned toward 23.4% acceptance during
    warmup with a step size decaying like ``1/sqrt(iteration)``; the scales are
    frozen afterwards. ``log_posterior(theta, *args)`` may be a plain Python
    callable or a numba-compiled function. Chains start at ``init`` perturbed
    by ``init_jitter`` times the initial proposal scale.
    """
    theta0 = np.array(init, dtype=float).ravel()
    d = theta0.size
    scale0 = np.broadcast_to(np.asarray(init_scale, dtype=float), (d,)).copy()
    if np.any(scale0 <= 0):
        raise ValueError("initial proposal scales must be positive")
    args = tuple(args)
    lp0 = float(log_posterior(theta0, *args))
    if np.isnan(lp0):
        raise SamplerError("log posterior is NaN at the initial point")
    if not np.isfinite(lp0):
        raise SamplerError("log posterior is not finite at the initial point")

    kernel = _chain_kernel_jit if isinstance(log_posterior, CPUDispatcher) else _chain_kernel
    child_rngs = rng.spawn(spec.chains)
    kept = spec.iterations - spec.warmup
    per_chain = np.empty((spec.chains, kept, d))
    acc_rate = np.empty(spec.chains)
    for c, crng in enumerate(child_rngs):
        start = theta0 + init_jitter * scale0 * crng.standard_normal(d)
        if not np.isfinite(log_posterior(start, *args)):
            start = theta0.copy()
        z = crng.standard_normal((spec.iterations, d))
        u = crng.random((spec.iterations, d))
        out, kept_acc, total_acc, _ = kernel(log_posterior, start, args, scale0, z, u, spec.warmup)
        if total_acc == 0:
            raise SamplerError("every proposal was rejected; proposal scale is degenerate")
        per_chain[c] = out
        acc_rate[c] = kept_acc / (kept * d)

    rh = np.array([rhat(per_chain[:, :, j]) for j in range(d)])
    if names is None:
        names = [f"theta[{j}]" for j in range(d)]
    if rh.size and np.max(rh) > 1.1:
        log.info("max rhat %.3f exceeds 1.1", float(np.max(rh)))
    return PosteriorDraws(
        parameter_names=list(names),
        draws=per_chain.reshape(-1, d),
        acceptance_rate=acc_rate,
        rhat=rh,
        chains=spec.chains,
    )


def select_draws(n_draws: int, n_available: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``n_draws`` posterior rows: evenly thinned, or resampled if too few."""
    if n_available < 1:
        raise ValueError("no posterior draws available")
    if n_draws <= n_available:
        return np.linspace(0, n_available - 1, n_draws).round().astype(int)
    return rng.integers(0, n_available, size=n_draws)

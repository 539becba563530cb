import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from epicast import gp
from epicast.gp import (
    KernelConfig,
    build_covariance,
    cholesky,
    fit_gp_values,
    forecast_gp_values,
    gp_conditional,
    kernel_pe,
    kernel_se,
)
from epicast.samplers import ChainSpec
from oracles import gp_joint_partition


def test_kernel_examples():
    assert kernel_se(3.0, 3.0, 2.0, 5.0) == 4.0
    assert kernel_se(0.0, 7.0, 1.0, 7.0) == pytest.approx(np.exp(-0.5))
    assert kernel_se(0.0, 50.0, 1.5, 1e9) == pytest.approx(2.25)
    assert kernel_pe(0.0, 7.0, 1.3, 1.0, 7.0) == pytest.approx(1.69)
    assert kernel_pe(0.0, 3.5, 1.0, 1.0, 7.0) == pytest.approx(np.exp(-1))
    assert kernel_pe(2.0, 2.0, 0.5, 1.0, 7.0) == 0.25


@given(st.floats(-100, 100), st.floats(-100, 100))
def test_kernels_are_symmetric(a, b):
    assert kernel_se(a, b, 1.2, 7.0) == kernel_se(b, a, 1.2, 7.0)
    assert kernel_pe(a, b, 1.2, 1.0, 7.0) == kernel_pe(b, a, 1.2, 1.0, 7.0)


def test_build_covariance_properties():
    hyper = (1.0, 0.5, 0.3, 0.2)
    k1 = build_covariance([0.0], hyper)
    assert k1[0, 0] == pytest.approx(1 + 0.25 + 0.09 + 0.04)
    t = np.sort(np.random.default_rng(0).uniform(0, 56, 10))
    k = build_covariance(t, hyper)
    assert np.allclose(k, k.T)
    assert np.linalg.eigvalsh(k).min() > 0
    noiseless = build_covariance(t, hyper[:3] + (0.0,))
    diff = k - noiseless
    assert np.allclose(np.diag(diff), 0.04)
    assert np.all(diff[~np.eye(10, dtype=bool)] == 0)
    perm = np.array([1, 0] + list(range(2, 10)))
    assert np.allclose(build_covariance(t[perm], hyper), k[np.ix_(perm, perm)])


def test_cholesky_jitter_ladder():
    singular = np.ones((3, 3))
    chol = cholesky(singular)
    assert np.allclose(chol @ chol.T, singular, atol=1e-5)
    with pytest.raises(gp.CholeskyError):
        cholesky(-np.eye(2))


def test_conditional_matches_joint_partition():
    rng = np.random.default_rng(3)
    cfg = KernelConfig(rho_short=7.0)
    train_t = np.arange(5.0)
    test_t = np.arange(5.0, 9.0)
    y = rng.standard_normal(5)
    hyper = (0.8, 0.4, 0.3, 0.1)
    mean, cov = gp_conditional(hyper, train_t, y, test_t, cfg)
    m_ref, c_ref = gp_joint_partition(hyper, train_t, y, test_t, rho=(56.0, 7.0, 1.0))
    assert np.max(np.abs(mean - m_ref)) < 1e-8
    assert np.max(np.abs(cov - c_ref)) < 1e-8


def test_predictive_variance_grows_for_flat_data():
    cfg = KernelConfig()
    t = np.arange(57.0)
    _, cov = gp_conditional((0.5, 0.3, 0.1, 0.1), t, np.zeros(57), np.arange(57.0, 71.0), cfg)
    sd = np.sqrt(np.diag(cov))
    assert sd[-1] >= sd[0]


def test_fit_gp_noise_recovery_on_flat_data():
    y = 0.1 * np.random.default_rng(0).standard_normal(57) + 3.0
    fit = fit_gp_values(y, KernelConfig(), ChainSpec(2, 800, 400), np.random.default_rng(1))
    assert 0.05 <= fit.hyper_draws[:, 3].mean() <= 0.2
    assert abs(fit.train_y.mean()) < 1e-12
    assert fit.y_mean == pytest.approx(y.mean())


def test_fit_gp_weekly_signal_is_attributed_to_periodic_kernel():
    t = np.arange(57.0)
    y = np.sin(2 * np.pi * t / 7) + 0.01 * np.random.default_rng(0).standard_normal(57)
    cfg = KernelConfig(rho_short=7.0)
    fit = fit_gp_values(y, cfg, ChainSpec(2, 800, 400), np.random.default_rng(2))
    a_short2 = (fit.hyper_draws[:, 1] ** 2).mean()
    a_week2 = (fit.hyper_draws[:, 2] ** 2).mean()
    assert a_week2 > a_short2 * np.exp(-49 / (2 * 7.0**2))


def test_fit_gp_constant_data_clamps_sigma(caplog):
    fit = fit_gp_values(np.full(57, 1.0), KernelConfig(), ChainSpec(1, 200, 100), np.random.default_rng(0))
    assert np.all(fit.hyper_draws[:, 3] >= gp.MIN_SIGMA)


def test_forecast_gp_shape_and_centering():
    y = 0.1 * np.random.default_rng(0).standard_normal(57) + 3.0
    fit = fit_gp_values(y, KernelConfig(), ChainSpec(2, 400, 200), np.random.default_rng(1))
    out = forecast_gp_values(fit, 14, np.random.default_rng(0), n_draws=400)
    assert out.shape == (400, 14)
    assert abs(np.median(out) - 3.0) < 0.3

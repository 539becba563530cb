import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epicast import sarima
from epicast.corpus import from_log_incidence, to_log_incidence
from epicast.samplers import PosteriorDraws
from epicast.sarima import SarimaOrder, fit_arma, fit_sarima, forecast_sarima, seasonal_difference
from helpers import make_window


def test_seasonal_difference_examples():
    assert np.all(seasonal_difference(np.full(10, 3.0)) == 0)
    assert np.all(seasonal_difference(np.arange(20.0)) == 7)
    assert np.allclose(seasonal_difference(np.tile(np.arange(7.0), 4)), 0)
    with pytest.raises(ValueError):
        seasonal_difference(np.ones(7))


@settings(max_examples=30)
@given(st.lists(st.floats(-20, 20), min_size=8, max_size=60))
def test_seasonal_difference_round_trip(values):
    y = np.array(values)
    back = sarima.undo_seasonal_difference(seasonal_difference(y), y[:7])
    assert np.allclose(back, y, atol=1e-12, rtol=0)


def test_order_validation_and_names():
    assert SarimaOrder().names == ["alpha", "beta[0]", "phi[0]", "sigma"]
    assert SarimaOrder(0, 0, 0).names == ["alpha", "sigma"]
    with pytest.raises(ValueError):
        SarimaOrder(3, 0, 0)


def _ar1(n, beta, sigma, rng, burn=100):
    x = np.zeros(n + burn)
    e = sigma * rng.standard_normal(n + burn)
    for t in range(1, n + burn):
        x[t] = beta * x[t - 1] + e[t]
    return x[burn:]


def test_white_noise_gives_small_coefficients(small_spec):
    x = 0.1 * np.random.default_rng(4).standard_normal(50)
    fit = fit_arma(x, SarimaOrder(1, 0, 1), small_spec, np.random.default_rng(0))
    assert abs(fit["beta[0]"].mean()) < 0.2
    assert abs(fit["phi[0]"].mean()) < 0.2
    assert 0.05 < fit["sigma"].mean() < 0.2


def test_too_short_series_is_rejected(small_spec):
    with pytest.raises(ValueError, match="usable points"):
        fit_arma(np.zeros(10), SarimaOrder(), small_spec, np.random.default_rng(0))


def test_posterior_respects_stationarity(small_spec):
    x = _ar1(50, 0.5, 0.1, np.random.default_rng(1))
    fit = fit_arma(x, SarimaOrder(2, 0, 2), small_spec, np.random.default_rng(0))
    assert np.all(np.abs(fit.columns("beta")) < 2)
    assert np.all(np.abs(fit.columns("phi")) < 2)


def _point_fit(order, alpha=0.0, sigma=1e-9, n=10):
    names = order.names
    row = np.zeros(len(names))
    row[0] = alpha
    row[-1] = sigma
    return PosteriorDraws(names, np.tile(row, (n, 1)), np.ones(1), np.ones(len(names)), 1, {"order": order})


def test_zero_model_is_seasonal_naive():
    rng = np.random.default_rng(0)
    counts = rng.integers(50, 500, 57)
    win = make_window(counts, population=1_000_000)
    fc = forecast_sarima(_point_fit(SarimaOrder(1, 0, 1)), win, 14, rng, n_draws=5)
    y = win.log_values
    expected = np.concatenate([y[-7:], y[-7:]])
    assert np.array_equal(fc.draws[0], np.rint(from_log_incidence(expected, 1_000_000, 0.01)))


def test_constant_history_gives_constant_forecast():
    win = make_window(np.full(57, 120), population=1_000_000)
    fc = forecast_sarima(_point_fit(SarimaOrder(1, 1, 1)), win, 14, np.random.default_rng(0), n_draws=3)
    assert np.all(fc.draws == 120)


def test_forecast_spread_grows_with_horizon(small_spec):
    rng = np.random.default_rng(2)
    x = _ar1(64, 0.5, 0.1, rng)
    counts = np.rint(1000 * np.exp(x[:57])).astype(int)
    win = make_window(counts, population=1_000_000)
    fit = fit_sarima(win, SarimaOrder(1, 0, 0), small_spec, np.random.default_rng(0))
    fc = forecast_sarima(fit, win, 14, np.random.default_rng(1), n_draws=2000)
    logd = to_log_incidence(fc.draws, 1_000_000)
    mad = np.median(np.abs(logd - np.median(logd, axis=0)), axis=0)
    assert np.var(logd[:, 13]) >= np.var(logd[:, 0])
    assert np.all(mad[1:] >= 0.95 * mad[:-1])
    assert fc.draws.shape == (2000, 14)


def test_fit_with_nonseasonal_difference(small_spec):
    counts = np.rint(1000 * np.exp(0.02 * np.arange(57))).astype(int)
    win = make_window(counts, population=1_000_000)
    fit = fit_sarima(win, SarimaOrder(1, 1, 0), small_spec, np.random.default_rng(0))
    fc = forecast_sarima(fit, win, 14, np.random.default_rng(1), n_draws=200)
    assert np.median(fc.draws[:, -1]) > counts[-1]

"""Probabilistic epidemic forecasting: renewal and time-series models, backtests, scoring."""

__version__ = "0.1.0"

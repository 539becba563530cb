"""Shared builders for the test suite."""

import datetime as dt

import numpy as np

from epicast.corpus import RegionSeries, training_window

# filled by test_acceptance.py, printed at the end of the session
CRITERIA: dict = {}


def make_series(cases, start=dt.date(2020, 1, 5), population=100_000, region="A") -> RegionSeries:
    cases = np.asarray(cases, dtype=np.int64)
    dates = np.arange(np.datetime64(start), np.datetime64(start) + len(cases))
    return RegionSeries(region, dates, cases, population)


def make_window(cases, population=100_000, region="A"):
    """Training window ending on the last day of ``cases`` (needs 57 values)."""
    s = make_series(cases, population=population, region=region)
    return training_window(s, s.end)

import datetime as dt

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epicast import corpus
from epicast.corpus import (
    DataError,
    PhaseLabel,
    forecast_origins,
    from_log_incidence,
    load_phases,
    load_series,
    preprocess,
    to_log_incidence,
    training_window,
    write_series,
)
from helpers import make_series


def _write(path, rows, header="date,region,cases,population"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return path


def test_load_series_round_trip(tmp_path):
    s = make_series(np.arange(10), population=5000, region="X")
    write_series(tmp_path / "c.csv", [s])
    back = load_series(tmp_path / "c.csv")["X"]
    assert np.array_equal(back.cases, s.cases)
    assert back.population == 5000
    assert back.start == s.start and back.end == s.end


def test_load_series_sorts_rows_and_keeps_negative_counts(tmp_path):
    p = _write(tmp_path / "c.csv", ["2020-01-02,A,-3,100", "2020-01-01,A,4,100"])
    s = load_series(p)["A"]
    assert s.cases.tolist() == [4, -3]


def test_load_series_custom_schema(tmp_path):
    p = _write(tmp_path / "c.csv", ["2020-01-01,A,4,100"], header="day,state,n,pop")
    s = load_series(p, {"date": "day", "region": "state", "cases": "n", "population": "pop"})
    assert s["A"].cases.tolist() == [4]


@pytest.mark.parametrize(
    "rows, message",
    [
        (["2020-01-01,A,1,100", "2020-01-01,A,2,100"], "duplicate"),
        (["2020-01-01,A,1,100", "2020-01-03,A,2,100"], "missing day"),
        (["2020-01-01,A,x,100"], "malformed"),
        (["2020-01-01,A,1,0"], "population"),
        (["2020-01-01,A,1,100", "2020-01-02,A,1,200"], "population changes"),
    ],
)
def test_load_series_rejects_bad_input(tmp_path, rows, message):
    with pytest.raises(DataError, match=message):
        load_series(_write(tmp_path / "c.csv", rows))


def test_load_series_missing_column(tmp_path):
    p = _write(tmp_path / "c.csv", ["2020-01-01,A,1"], header="date,region,cases")
    with pytest.raises(DataError, match="missing columns"):
        load_series(p)


def test_preprocess_replaces_negatives_with_previous_clean_value():
    s = make_series([5, -1, -2, 7, -3])
    assert preprocess(s).cases.tolist() == [5, 5, 5, 7, 7]


def test_preprocess_negative_first_day_becomes_zero():
    assert preprocess(make_series([-4, 3])).cases.tolist() == [0, 3]


def test_preprocess_is_identity_without_negatives():
    s = make_series([1, 2, 3])
    assert preprocess(s) is s


@given(st.lists(st.integers(-50, 50), min_size=1, max_size=40))
def test_preprocess_output_is_non_negative(values):
    out = preprocess(make_series(values)).cases
    assert np.all(out >= 0)
    keep = np.asarray(values) >= 0
    assert np.array_equal(out[keep], np.asarray(values)[keep])


def test_log_incidence_round_trip():
    counts = np.array([0, 1, 10, 12345])
    y = to_log_incidence(counts, 1_000_000, 0.01)
    assert np.allclose(from_log_incidence(y, 1_000_000, 0.01), counts)


def test_log_incidence_zero_count_maps_to_log_offset():
    assert to_log_incidence(0, 10_000, 0.01) == pytest.approx(np.log(0.01))


def test_from_log_incidence_clamps_at_zero():
    assert from_log_incidence(np.log(0.001), 100_000, 0.01) == 0.0


def test_region_series_rejects_gaps():
    dates = np.array(["2020-01-01", "2020-01-03"], dtype="datetime64[D]")
    with pytest.raises(DataError):
        corpus.RegionSeries("A", dates, np.array([1, 2]), 100)


def test_index_of_outside_range():
    s = make_series([1, 2, 3])
    with pytest.raises(KeyError):
        s.index_of(s.end + dt.timedelta(days=1))


def test_phase_label_lookup_and_overlap(tmp_path):
    lab = PhaseLabel("A", ((dt.date(2020, 1, 1), dt.date(2020, 1, 10), "Plateau"),))
    assert lab.phase_at(dt.date(2020, 1, 10)) == "plateau"
    assert lab.phase_at(dt.date(2020, 1, 11)) is None
    with pytest.raises(DataError, match="overlapping"):
        PhaseLabel("A", (("2020-01-01", "2020-01-10", "plateau"), ("2020-01-10", "2020-01-12", "plateau")))
    with pytest.raises(DataError, match="unknown phase"):
        PhaseLabel("A", (("2020-01-01", "2020-01-10", "surge"),))
    p = tmp_path / "ph.csv"
    p.write_text("region,start_date,end_date,phase\nA,2020-01-01,2020-01-05,exponential_increase\n")
    assert load_phases(p)["A"].phase_at("2020-01-03") == "exponential increase"


def test_training_window_has_57_days_ending_at_origin():
    s = make_series(np.arange(100))
    origin = s.start + dt.timedelta(days=70)
    w = training_window(s, origin)
    assert len(w.values) == 57
    assert w.dates[-1] == np.datetime64(origin)
    assert w.values[0] == 70 - 56


def test_training_window_needs_56_days_of_history():
    s = make_series(np.arange(100))
    with pytest.raises(DataError):
        training_window(s, s.start + dt.timedelta(days=55))
    training_window(s, s.start + dt.timedelta(days=56))


def test_forecast_origins_are_sundays_with_history_and_future():
    s = make_series(np.ones(120), start=dt.date(2020, 1, 1))
    origins = forecast_origins(s, s.start, s.end)
    assert origins
    assert all(o.weekday() == 6 for o in origins)
    assert origins[0] - s.start >= dt.timedelta(days=56)
    assert s.end - origins[-1] >= dt.timedelta(days=14)


def test_forecast_origins_rejects_reversed_range():
    s = make_series(np.ones(120))
    with pytest.raises(ValueError):
        forecast_origins(s, "2020-03-01", "2020-02-01")


@settings(max_examples=30)
@given(st.integers(0, 60), st.integers(0, 200))
def test_forecast_origins_fit_the_series(offset, length):
    s = make_series(np.ones(80 + length), start=dt.date(2020, 1, 1) + dt.timedelta(days=offset))
    for o in forecast_origins(s, s.start, s.end):
        training_window(s, o)
        assert s.index_of(o) + 14 <= len(s) - 1

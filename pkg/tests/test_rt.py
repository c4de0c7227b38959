import datetime as dt

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from terrepi.core import DailySeries, iso_week
from terrepi.gentime import discretize_gamma, point_mass
from terrepi.rt import (
    OnsetRecord,
    RtSeries,
    align_by_onset,
    attribution_matrix,
    censored_weeks,
    estimate_all,
    first_case_date,
    onset_day,
    wallinga_teunis,
    weekly_average,
)

START = dt.date(2020, 3, 2)  # a Monday


def brute_force_rt(c, pmf):
    """Direct pair sums: Rt(t) = sum_{j>t} p(t->j) c[j] / c[t]."""
    n, L = len(c), len(pmf)
    out = np.full(n, np.nan)
    for t in range(n):
        if c[t] <= 0:
            continue
        total = 0.0
        for j in range(t + 1, min(n, t + L + 1)):
            denom = sum(c[k] * pmf[j - k - 1] for k in range(max(0, j - L), j))
            if denom > 0:
                total += c[t] * pmf[j - t - 1] / denom * c[j]
        out[t] = total / c[t]
    return out


def series(values, start=START):
    return DailySeries("X", start, values)


def test_single_pair():
    r = wallinga_teunis(series([1, 1]), point_mass(1, 2))
    assert r.daily_rt[0] == pytest.approx(1.0)


def test_constant_incidence_interior_one():
    gi = discretize_gamma(4, 2)
    r = wallinga_teunis(series(np.full(100, 37.0)), gi)
    L = gi.max_lag
    interior = r.daily_rt[L : 100 - L]
    assert np.all(np.abs(interior - 1.0) <= 0.05)
    np.testing.assert_allclose(r.daily_rt, brute_force_rt(np.full(100, 37.0), gi.pmf), atol=1e-12)


def test_exponential_growth_lotka_euler():
    gi = discretize_gamma(4, 2)
    rate = 0.1
    c = np.exp(rate * np.arange(120))
    r = wallinga_teunis(series(c), gi)
    oracle = 1.0 / sum(gi.pmf[k - 1] * np.exp(-rate * k) for k in range(1, gi.max_lag + 1))
    L = gi.max_lag
    np.testing.assert_allclose(r.daily_rt[L : 120 - L], oracle, rtol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 30), min_size=12, max_size=60), st.floats(1.5, 6), st.floats(0.5, 3))
def test_matches_brute_force(values, mean, sd):
    gi = discretize_gamma(mean, sd)
    c = np.array(values, dtype=float)
    r = wallinga_teunis(series(c), gi)
    np.testing.assert_allclose(r.daily_rt, brute_force_rt(c, gi.pmf), rtol=1e-10, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=20, max_size=60), st.floats(0.01, 1000))
def test_scale_invariance(values, k):
    gi = discretize_gamma(4, 2)
    c = np.array(values, dtype=float)
    a = wallinga_teunis(series(c), gi).daily_rt
    b = wallinga_teunis(series(c * k), gi).daily_rt
    np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_attribution_columns_sum_to_one(rng):
    gi = discretize_gamma(4, 2)
    c = rng.poisson(5, 50).astype(float)
    c[[3, 4, 10]] = 0
    P = attribution_matrix(c, gi)
    for j in range(len(c)):
        denom = sum(c[k] * gi.pmf[j - k - 1] for k in range(max(0, j - gi.max_lag), j))
        if denom > 0:
            assert abs(P[:, j].sum() - 1) <= 1e-9
        else:
            assert P[:, j].sum() == 0


def test_zero_days_absent_and_censoring():
    gi = discretize_gamma(4, 2)
    c = np.array([0, 5, 0, 3] + [4] * 40, dtype=float)
    r = wallinga_teunis(series(c), gi)
    assert np.isnan(r.daily_rt[0]) and np.isnan(r.daily_rt[2])
    assert not np.isnan(r.daily_rt[1])
    assert r.censored.sum() == gi.max_lag
    assert r.censored[-gi.max_lag :].all() and not r.censored[: -gi.max_lag].any()


def test_all_zero_series_has_no_values():
    gi = discretize_gamma(4, 2)
    r = wallinga_teunis(series(np.zeros(30)), gi)
    assert np.isnan(r.daily_rt).all()
    out = estimate_all({"X": series(np.zeros(30))}, gi)
    assert len(out["X"].weekly_rt) == 0
    with pytest.raises(ValueError):
        weekly_average(r)


def test_rtseries_rejects_negative():
    with pytest.raises(ValueError):
        RtSeries("X", START, [1.0, -0.1], [False, False])


# --- weekly averages

def test_weekly_average_examples():
    vals = [1.2] * 7 + [1.0, np.nan, np.nan, np.nan, np.nan, np.nan, 3.0] + [np.nan] * 7
    r = RtSeries("X", START, vals, [False] * 21)
    w = weekly_average(r)
    assert w.weeks == (iso_week(START), iso_week(START + dt.timedelta(days=7)))
    np.testing.assert_allclose(w.values, [1.2, 2.0])


@settings(max_examples=40, deadline=None)
@given(st.lists(st.one_of(st.none(), st.floats(0, 5)), min_size=1, max_size=60), st.integers(0, 6))
def test_weekly_average_oracle(vals, offset):
    start = START + dt.timedelta(days=offset)
    arr = np.array([np.nan if v is None else v for v in vals])
    r = RtSeries("X", start, arr, np.zeros(len(arr), bool))
    if np.isnan(arr).all():
        return
    w = weekly_average(r)
    buckets = {}
    for i, v in enumerate(arr):
        if not np.isnan(v):
            buckets.setdefault(iso_week(start + dt.timedelta(days=i)), []).append(v)
    assert list(w.weeks) == sorted(buckets)
    for wk, v in zip(w.weeks, w.values):
        assert v == pytest.approx(sum(buckets[wk]) / len(buckets[wk]), rel=1e-12, abs=1e-12)


def test_censored_weeks():
    gi = point_mass(3, 10)
    r = wallinga_teunis(series(np.ones(21)), gi)
    # the last 10 days (11..20) straddle the second and third week
    assert censored_weeks(r) == {iso_week(START + dt.timedelta(days=d)) for d in (11, 14)}


# --- onset

def test_onset_examples():
    assert onset_day(DailySeries("A", dt.date(2020, 1, 1), [20])).onset_day == 0
    rec = onset_day(DailySeries("A", dt.date(2020, 3, 1), [5] * 10))
    assert rec.reached and rec.onset_day == 63 and rec.date == dt.date(2020, 3, 4)
    none = onset_day(DailySeries("A", dt.date(2020, 3, 1), [0] * 10))
    assert not none.reached and none.onset_day is None


def test_onset_record_invariant():
    with pytest.raises(ValueError):
        OnsetRecord("A", None, True)
    with pytest.raises(ValueError):
        OnsetRecord("A", 5, False)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 10), min_size=5, max_size=40), st.integers(0, 39), st.integers(1, 10))
def test_onset_monotone_in_earlier_cases(values, pos, extra):
    base = DailySeries("A", dt.date(2020, 2, 1), values)
    bumped = np.array(values, dtype=float)
    bumped[min(pos, len(values) - 1)] += extra
    a, b = onset_day(base), onset_day(DailySeries("A", dt.date(2020, 2, 1), bumped))
    if a.reached:
        assert b.reached and b.onset_day <= a.onset_day


# --- alignment

def test_align_shift_and_width():
    idx = pd.date_range("2020-02-01", periods=40, freq="D")
    s = pd.Series(np.arange(40.0), index=idx)
    first = first_case_date(DailySeries("A", dt.date(2020, 2, 1), [0] * 9 + [1] * 31))
    assert first == dt.date(2020, 2, 10)
    frame, warns = align_by_onset({"A": s, "B": s}, {"A": first, "B": None}, 28)
    assert list(frame.columns) == list(range(28))
    assert frame.loc["A", 5] == s[pd.Timestamp("2020-02-15")]
    assert "B" not in frame.index
    assert len(warns) == 1 and "B" in warns[0]

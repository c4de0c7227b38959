"""Case-reproduction numbers by case-pair attribution, onset and aggregation.

For a case series ``c`` and generation interval ``w`` (lags 1..L) the
denominator ``D[j] = sum_k c[j-k] w[k]`` is the total infection pressure on
day ``j``.  A case on day ``j`` is attributed to day ``t`` with probability
``c[t] w[j-t] / D[j]``, so the expected number of secondary cases per case
infected on day ``t`` is ``R[t] = sum_k w[k] c[t+k] / D[t+k]``.  Rt is
attached to the infector day.
"""
from __future__ import annotations

import datetime as dt
import logging
from collections.abc import Mapping
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .core import EPOCH, DailySeries, Week, WeeklySeries, iso_week
from .gentime import GenerationInterval

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RtSeries:
    """Daily Rt (NaN where undefined) with right-censoring flags."""

    region_id: str
    start_date: dt.date
    daily_rt: np.ndarray
    censored: np.ndarray
    weekly_rt: WeeklySeries | None = None

    def __post_init__(self):
        rt = np.array(self.daily_rt, dtype=float)
        cens = np.array(self.censored, dtype=bool)
        if rt.shape != cens.shape:
            raise ValueError("daily_rt and censored must align")
        if np.any(rt[~np.isnan(rt)] < 0):
            raise ValueError("Rt must be non-negative")
        rt.setflags(write=False)
        cens.setflags(write=False)
        object.__setattr__(self, "daily_rt", rt)
        object.__setattr__(self, "censored", cens)

    def __len__(self) -> int:
        return len(self.daily_rt)

    @property
    def dates(self) -> list[dt.date]:
        return [self.start_date + dt.timedelta(days=i) for i in range(len(self))]

    def to_series(self) -> pd.Series:
        idx = pd.date_range(self.start_date, periods=len(self), freq="D")
        return pd.Series(self.daily_rt, index=idx, name=self.region_id)


@dataclass(frozen=True)
class OnsetRecord:
    region_id: str
    onset_day: int | None
    reached: bool

    def __post_init__(self):
        if self.reached != (self.onset_day is not None):
            raise ValueError("onset_day must be set exactly when reached")

    @property
    def date(self) -> dt.date | None:
        return None if self.onset_day is None else EPOCH + dt.timedelta(days=self.onset_day)


def infection_pressure(cases: np.ndarray, pmf: np.ndarray) -> np.ndarray:
    """``D[j] = sum_{k=1..L} cases[j-k] pmf[k-1]`` (only earlier days contribute)."""
    n = len(cases)
    full = np.convolve(cases, np.concatenate(([0.0], pmf)))
    return full[:n]


def wallinga_teunis(cases: DailySeries, gi: GenerationInterval) -> RtSeries:
    c = np.asarray(cases.values, dtype=float)
    n = len(c)
    w = gi.pmf
    L = gi.max_lag
    denom = infection_pressure(c, w)
    # days without any admissible infector contribute nothing
    ratio = np.divide(c, denom, out=np.zeros(n), where=denom > 0)
    padded = np.concatenate((ratio, np.zeros(L)))
    rt = np.zeros(n)
    for k in range(1, L + 1):
        rt += w[k - 1] * padded[k : k + n]
    rt[c <= 0] = np.nan
    censored = np.zeros(n, dtype=bool)
    censored[max(0, n - L) :] = True
    return RtSeries(cases.region_id, cases.start_date, rt, censored)


def attribution_matrix(cases, gi: GenerationInterval) -> np.ndarray:
    """Dense ``P[t, j]``: probability that a case on day ``j`` was infected on day ``t``.

    Quadratic in series length; meant for checking and small series.
    """
    c = np.asarray(cases, dtype=float)
    n = len(c)
    L = gi.max_lag
    P = np.zeros((n, n))
    for j in range(n):
        for t in range(max(0, j - L), j):
            P[t, j] = c[t] * gi.pmf[j - t - 1]
        total = P[:, j].sum()
        if total > 0:
            P[:, j] /= total
    return P


def estimate_all(cases: Mapping[str, DailySeries], gi: GenerationInterval) -> dict[str, RtSeries]:
    out = {}
    for rid in sorted(cases):
        if not np.any(cases[rid].values > 0):
            log.warning("%s: no cases, Rt undefined", rid)
        rt = wallinga_teunis(cases[rid], gi)
        out[rid] = RtSeries(rt.region_id, rt.start_date, rt.daily_rt, rt.censored, weekly_average(rt, strict=False))
    return out


def _day_weeks(start: dt.date, n: int) -> list[Week]:
    return [iso_week(start + dt.timedelta(days=i)) for i in range(n)]


def weekly_average(rt: RtSeries, strict: bool = True) -> WeeklySeries:
    """Mean of the defined daily values in each ISO week; empty weeks are absent."""
    defined = ~np.isnan(rt.daily_rt)
    if strict and not defined.any():
        raise ValueError(f"{rt.region_id}: no defined daily Rt values")
    frame = pd.DataFrame({"week": _day_weeks(rt.start_date, len(rt)), "rt": rt.daily_rt})
    means = frame.groupby("week", sort=True)["rt"].mean().dropna()
    return WeeklySeries(rt.region_id, tuple(means.index), means.to_numpy())


def censored_weeks(rt: RtSeries) -> set[Week]:
    """ISO weeks containing at least one right-censored day."""
    return {w for w, c in zip(_day_weeks(rt.start_date, len(rt)), rt.censored) if c}


def onset_day(cases: DailySeries, threshold: int = 20, epoch: dt.date = EPOCH) -> OnsetRecord:
    """Days from ``epoch`` until cumulative cases first reach ``threshold``."""
    cum = np.cumsum(cases.values)
    hit = np.flatnonzero(cum >= threshold)
    if len(hit) == 0:
        return OnsetRecord(cases.region_id, None, False)
    day = cases.start_date + dt.timedelta(days=int(hit[0]))
    return OnsetRecord(cases.region_id, (day - epoch).days, True)


def first_case_date(cases: DailySeries) -> dt.date | None:
    idx = np.flatnonzero(cases.values > 0)
    if len(idx) == 0:
        return None
    return cases.start_date + dt.timedelta(days=int(idx[0]))


def align_by_onset(series: Mapping[str, pd.Series], anchors: Mapping[str, dt.date | None], window_days: int):
    """Re-index date-indexed series to days since each region's anchor date.

    Returns ``(frame, warnings)``: ``frame`` has one row per kept region and
    columns ``0..window_days-1`` (NaN where the region has no value).
    Regions without an anchor are dropped and reported in ``warnings``.
    """
    if window_days < 1:
        raise ValueError("window_days must be >= 1")
    rows = {}
    warnings = []
    for rid in sorted(series):
        anchor = anchors.get(rid)
        if anchor is None:
            msg = f"{rid}: no recorded case, excluded from onset alignment"
            log.warning(msg)
            warnings.append(msg)
            continue
        s = series[rid]
        idx = pd.date_range(anchor, periods=window_days, freq="D")
        rows[rid] = s.reindex(idx).to_numpy(dtype=float)
    frame = pd.DataFrame.from_dict(rows, orient="index", columns=range(window_days))
    frame.index.name = "region_id"
    return frame, warnings

"""Seasonal + trend mortality baselines and band-exceedance excess mortality.

The baseline is a Gaussian penalised regression

    deaths ~ intercept + slope * years + s(week_of_year)

with ``s`` a cyclic cubic B-spline on a 52-week period (week 53 shares the
week-52 position) under a cyclic second-difference penalty.  The seasonal
coefficients are constrained to sum to zero, which separates the seasonal
term from the intercept.  The smoothing parameter is chosen by generalised
cross-validation over a fixed log-spaced grid.  Regions observed on the same
weeks share a design matrix and are fitted together.
"""
from __future__ import annotations

import datetime as dt
import logging
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.linalg import cho_factor, cho_solve, null_space

from .core import TYPOLOGIES, InputError, Registry, Week, WeeklySeries, group_median, week_label, week_start

log = logging.getLogger(__name__)

PERIOD = 52.0
MIN_WEEKS = 156
Z95 = 1.959963984540054
#: Relative smoothing grid; scaled by ||X_s'X_s|| / ||S||.
LAMBDA_GRID = np.logspace(-9, 4, 53)


def week_position(week: int) -> float:
    """Position on the seasonal cycle, in weeks from 0 (week 1) to 51 (weeks 52 and 53)."""
    return float(min(week, 52) - 1)


def cyclic_bspline_basis(x, n_knots: int = 12, period: float = PERIOD) -> np.ndarray:
    """Uniform cyclic cubic B-spline basis, one column per knot.

    Columns sum to one at every x (partition of unity).
    """
    if n_knots < 4:
        raise ValueError("cyclic cubic basis needs at least 4 knots")
    x = np.asarray(x, dtype=float)
    h = period / n_knots
    centres = np.arange(n_knots) * h
    d = (x[:, None] - centres[None, :] + period / 2) % period - period / 2
    u = np.abs(d / h)
    out = np.zeros_like(u)
    inner = u < 1
    outer = (u >= 1) & (u < 2)
    out[inner] = (4 - 6 * u[inner] ** 2 + 3 * u[inner] ** 3) / 6
    out[outer] = (2 - u[outer]) ** 3 / 6
    return out


def cyclic_difference_penalty(n_knots: int) -> np.ndarray:
    D = np.zeros((n_knots, n_knots))
    for i in range(n_knots):
        D[i, (i - 1) % n_knots] += 1
        D[i, i] -= 2
        D[i, (i + 1) % n_knots] += 1
    return D.T @ D


def _sum_to_zero(n_knots: int) -> np.ndarray:
    return null_space(np.ones((1, n_knots)))


def years_since(week: Week, start_year: int) -> float:
    return (week_start(week) - dt.date(start_year, 1, 1)).days / 365.25


@dataclass(frozen=True)
class BaselineModel:
    region_id: str
    intercept: float
    trend_slope: float
    seasonal_coeffs: np.ndarray
    dispersion: float
    training_span: tuple[int, int]
    n_knots: int = 12
    smoothing: float = 0.0
    edf: float = 0.0
    covariance: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)), repr=False)
    flags: tuple[str, ...] = ()

    @property
    def fallback(self) -> bool:
        return "fallback" in self.flags

    def seasonal(self, position) -> np.ndarray:
        """Seasonal component at cycle positions (in weeks, wraps every 52)."""
        B = cyclic_bspline_basis(np.atleast_1d(position), self.n_knots)
        return B @ self.seasonal_coeffs

    def design(self, weeks) -> np.ndarray:
        t = np.array([years_since(w, self.training_span[0]) for w in weeks])
        cols = [np.ones(len(weeks)), t]
        if not self.fallback:
            pos = np.array([week_position(w[1]) for w in weeks])
            cols.append(cyclic_bspline_basis(pos, self.n_knots) @ _sum_to_zero(self.n_knots))
            return np.column_stack([cols[0], cols[1], cols[2]])
        return np.column_stack(cols)

    def coefficients(self) -> np.ndarray:
        beta = [self.intercept, self.trend_slope]
        if not self.fallback:
            beta.extend(_sum_to_zero(self.n_knots).T @ self.seasonal_coeffs)
        return np.array(beta)


@dataclass(frozen=True)
class BaselinePrediction:
    region_id: str
    weeks: tuple[Week, ...]
    expected: np.ndarray
    lower95: np.ndarray
    upper95: np.ndarray


@dataclass(frozen=True)
class ExcessSeries:
    region_id: str
    weeks: tuple[Week, ...]
    observed: np.ndarray
    expected: np.ndarray
    lower95: np.ndarray
    upper95: np.ndarray
    excess: np.ndarray
    excess_pct: np.ndarray

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "region_id": self.region_id,
                "iso_week": [week_label(w) for w in self.weeks],
                "observed": self.observed,
                "expected": self.expected,
                "lower95": self.lower95,
                "upper95": self.upper95,
                "excess": self.excess,
                "excess_pct": self.excess_pct,
            }
        )


def _training_subset(history: WeeklySeries, train_start: int, train_end: int) -> WeeklySeries:
    sub = history.select(lambda w: train_start <= w[0] <= train_end)
    if len(sub) < MIN_WEEKS:
        raise InputError(
            f"{history.region_id}: {len(sub)} training weeks in {train_start}-{train_end}; need >= {MIN_WEEKS}"
        )
    if np.any(sub.values < 0):
        raise InputError(f"{history.region_id}: negative deaths in history")
    return sub


def _fit_group(weeks, Y: np.ndarray, ids, train_start, train_end, n_knots, grid):
    """Fit every column of ``Y`` (n_weeks x n_regions) on a shared design."""
    n = len(weeks)
    t = np.array([years_since(w, train_start) for w in weeks])
    pos = np.array([week_position(w[1]) for w in weeks])
    Z = _sum_to_zero(n_knots)
    Xs = cyclic_bspline_basis(pos, n_knots) @ Z
    X = np.column_stack([np.ones(n), t, Xs])
    p = X.shape[1]
    span = (train_start, train_end)

    ptp = np.ptp(Y, axis=0)
    seasonal_ok = np.linalg.matrix_rank(X) == p
    models = {}
    flat = ptp == 0
    if not seasonal_ok or flat.any():
        Xf = np.column_stack([np.ones(n), t])
        cols = np.arange(Y.shape[1]) if not seasonal_ok else np.flatnonzero(flat)
        why = "rank-deficient seasonal design" if not seasonal_ok else "constant series"
        XtX = Xf.T @ Xf
        beta = np.linalg.solve(XtX, Xf.T @ Y[:, cols])
        rss = ((Y[:, cols] - Xf @ beta) ** 2).sum(axis=0)
        inv = np.linalg.inv(XtX)
        for k, c in enumerate(cols):
            disp = float(rss[k] / (n - 2))
            log.warning("%s: %s, falling back to intercept + trend", ids[c], why)
            models[ids[c]] = BaselineModel(
                ids[c], float(beta[0, k]), float(beta[1, k]), np.zeros(n_knots), disp, span, n_knots,
                0.0, 2.0, disp * inv, ("fallback", why.replace(" ", "_")),
            )
        if not seasonal_ok:
            return models

    rest = [c for c in range(Y.shape[1]) if ids[c] not in models]
    if not rest:
        return models
    Yr = Y[:, rest]
    S = np.zeros((p, p))
    Sz = Z.T @ cyclic_difference_penalty(n_knots) @ Z
    S[2:, 2:] = Sz * (np.linalg.norm(Xs.T @ Xs) / np.linalg.norm(Sz))
    XtX = X.T @ X
    XtY = X.T @ Yr

    best_score = np.full(len(rest), np.inf)
    best_lam = np.zeros(len(rest))
    best_beta = np.zeros((p, len(rest)))
    best_edf = np.zeros(len(rest))
    for lam in grid:
        cf = cho_factor(XtX + lam * S)
        beta = cho_solve(cf, XtY)
        edf = float(np.trace(cho_solve(cf, XtX)))
        rss = ((Yr - X @ beta) ** 2).sum(axis=0)
        score = n * rss / (n - edf) ** 2
        better = score < best_score
        best_score[better] = score[better]
        best_lam[better] = lam
        best_beta[:, better] = beta[:, better]
        best_edf[better] = edf

    for k, c in enumerate(rest):
        lam = best_lam[k]
        beta = best_beta[:, k]
        rss = float(((Yr[:, k] - X @ beta) ** 2).sum())
        disp = rss / (n - best_edf[k])
        cov = disp * np.linalg.inv(XtX + lam * S)
        models[ids[c]] = BaselineModel(
            ids[c], float(beta[0]), float(beta[1]), Z @ beta[2:], disp, span, n_knots,
            float(lam), float(best_edf[k]), cov, (),
        )
    return models


def fit_baselines(
    histories: Mapping[str, WeeklySeries],
    train_start: int = 2011,
    train_end: int = 2019,
    n_knots: int = 12,
    grid=LAMBDA_GRID,
) -> dict[str, BaselineModel]:
    """Fit one baseline per region; regions sharing training weeks are batched."""
    groups: dict[tuple, list] = {}
    for rid in sorted(histories):
        sub = _training_subset(histories[rid], train_start, train_end)
        groups.setdefault(sub.weeks, []).append((rid, sub.values))
    models = {}
    for weeks, members in groups.items():
        Y = np.column_stack([v for _, v in members])
        ids = [rid for rid, _ in members]
        models.update(_fit_group(list(weeks), Y, ids, train_start, train_end, n_knots, grid))
    return {rid: models[rid] for rid in sorted(models)}


def fit_baseline(history: WeeklySeries, train_start: int = 2011, train_end: int = 2019, n_knots: int = 12,
                 grid=LAMBDA_GRID) -> BaselineModel:
    return fit_baselines({history.region_id: history}, train_start, train_end, n_knots, grid)[history.region_id]


def predict_baseline(model: BaselineModel, weeks) -> BaselinePrediction:
    weeks = tuple(tuple(w) for w in weeks)
    early = [w for w in weeks if w[0] < model.training_span[0]]
    if early:
        raise InputError(f"{model.region_id}: cannot predict before the training span: {week_label(early[0])}")
    X = model.design(weeks)
    mean = X @ model.coefficients()
    var = np.einsum("ij,jk,ik->i", X, model.covariance, X) + model.dispersion
    half = Z95 * np.sqrt(np.maximum(var, 0.0))
    return BaselinePrediction(model.region_id, weeks, mean, mean - half, mean + half)


def excess(observed: WeeklySeries, predicted: BaselinePrediction) -> ExcessSeries:
    """Observed minus expected, counted only where outside the 95% band."""
    if tuple(observed.weeks) != tuple(predicted.weeks):
        have, want = set(observed.weeks), set(predicted.weeks)
        bad = sorted(have ^ want) or [w for w, v in zip(observed.weeks, predicted.weeks) if w != v]
        raise InputError(f"{observed.region_id}: misaligned weeks {[week_label(w) for w in bad[:10]]}")
    obs = np.asarray(observed.values, dtype=float)
    exp_ = predicted.expected
    outside = (obs > predicted.upper95) | (obs < predicted.lower95)
    diff = np.where(outside, obs - exp_, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        pct = np.where(outside, 100.0 * (obs - exp_) / exp_, 0.0)
    return ExcessSeries(observed.region_id, tuple(observed.weeks), obs, exp_, predicted.lower95,
                        predicted.upper95, diff, pct)


def excess_for_regions(
    deaths: Mapping[str, WeeklySeries],
    train_start: int = 2011,
    train_end: int = 2019,
    target_year: int = 2020,
    n_knots: int = 12,
) -> dict[str, ExcessSeries]:
    models = fit_baselines(deaths, train_start, train_end, n_knots)
    out = {}
    for rid, model in models.items():
        target = deaths[rid].select(lambda w: w[0] == target_year)
        if len(target) == 0:
            log.warning("%s: no observations in %d", rid, target_year)
            continue
        out[rid] = excess(target, predict_baseline(model, target.weeks))
    return out


def aggregate_excess(excess_set: Mapping[str, ExcessSeries], registry: Registry) -> pd.DataFrame:
    """Weekly total excess across regions plus per-typology median ``excess_pct``."""
    if not excess_set:
        return pd.DataFrame(columns=["iso_week", "total_excess"] + [t.value for t in TYPOLOGIES])
    totals = {}
    pcts = {}
    for rid, ex in excess_set.items():
        labels = [week_label(w) for w in ex.weeks]
        totals[rid] = pd.Series(ex.excess, index=labels)
        pcts[rid] = pd.Series(ex.excess_pct, index=labels)
    total = pd.DataFrame(totals).sort_index().sum(axis=1, min_count=1)
    med = group_median(pcts, registry)
    out = pd.DataFrame({"total_excess": total}).join(med)
    for t in TYPOLOGIES:
        if t.value not in out:
            out[t.value] = np.nan
    out.index.name = "iso_week"
    return out.reset_index()[["iso_week", "total_excess"] + [t.value for t in TYPOLOGIES]]

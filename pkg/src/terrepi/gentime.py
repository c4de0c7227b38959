"""Discrete generation-interval distributions over integer day lags 1..L."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

#: Continuous mass a discretisation must retain before truncation.
COVERAGE = 0.999


@dataclass(frozen=True)
class GenerationInterval:
    """Probability mass ``pmf[k-1]`` for a lag of ``k`` days, ``k = 1..max_lag``.

    ``mean_days``/``sd_days`` are the requested (continuous) moments; the
    realised discrete moments are available as properties.
    """

    pmf: np.ndarray
    mean_days: float
    sd_days: float

    def __post_init__(self):
        pmf = np.array(self.pmf, dtype=float)
        if pmf.ndim != 1 or len(pmf) < 2:
            raise ValueError("generation interval needs at least two lags (L >= 2)")
        if np.any(pmf < 0) or not np.all(np.isfinite(pmf)):
            raise ValueError("generation interval probabilities must be finite and >= 0")
        if abs(pmf.sum() - 1.0) > 1e-9:
            raise ValueError(f"generation interval must sum to 1, got {pmf.sum():.12g}")
        pmf.setflags(write=False)
        object.__setattr__(self, "pmf", pmf)

    @classmethod
    def from_pmf(cls, pmf) -> "GenerationInterval":
        p = np.asarray(pmf, dtype=float)
        lags = np.arange(1, len(p) + 1)
        mean = float(lags @ p)
        return cls(p, mean, float(math.sqrt(max(((lags - mean) ** 2) @ p, 0.0))))

    @property
    def max_lag(self) -> int:
        return len(self.pmf)

    @property
    def lags(self) -> np.ndarray:
        return np.arange(1, self.max_lag + 1)

    @property
    def realized_mean(self) -> float:
        return float(self.lags @ self.pmf)

    @property
    def realized_sd(self) -> float:
        m = self.realized_mean
        return float(math.sqrt(((self.lags - m) ** 2) @ self.pmf))


def gamma_params(mean_days: float, sd_days: float) -> tuple[float, float]:
    """Method-of-moments (shape, scale)."""
    return (mean_days / sd_days) ** 2, sd_days**2 / mean_days


def required_lag(mean_days: float, sd_days: float, coverage: float = COVERAGE) -> int:
    shape, scale = gamma_params(mean_days, sd_days)
    return max(2, int(math.ceil(stats.gamma.ppf(coverage, shape, scale=scale))))


def discretize_gamma(mean_days: float, sd_days: float, max_lag: int | None = None) -> GenerationInterval:
    """Gamma interval masses on ``(k-1, k]`` for lags ``k = 1..max_lag``, renormalised.

    ``max_lag`` defaults to the smallest lag retaining 99.9% of the continuous
    mass; a smaller explicit value is rejected.
    """
    if not (mean_days > 0 and sd_days > 0):
        raise ValueError(f"mean_days and sd_days must be positive, got {mean_days}, {sd_days}")
    if mean_days < 1:
        # every discrete lag is >= 1 day, so such a mean cannot be represented
        raise ValueError(f"generation interval mean {mean_days} d is below the one-day lag resolution")
    need = required_lag(mean_days, sd_days)
    if max_lag is None:
        max_lag = need
    if max_lag < 2:
        raise ValueError("max_lag must be >= 2")
    if max_lag < need:
        raise ValueError(
            f"max_lag={max_lag} keeps less than {COVERAGE:.1%} of the gamma mass; need max_lag >= {need}"
        )
    shape, scale = gamma_params(mean_days, sd_days)
    edges = stats.gamma.cdf(np.arange(0, max_lag + 1), shape, scale=scale)
    pmf = np.diff(edges)
    pmf = pmf / pmf.sum()
    return GenerationInterval(pmf, float(mean_days), float(sd_days))


def point_mass(lag: int, max_lag: int | None = None) -> GenerationInterval:
    """All transmission at a single lag (test fixtures, toy models)."""
    max_lag = max(2, lag) if max_lag is None else max_lag
    pmf = np.zeros(max_lag)
    pmf[lag - 1] = 1.0
    return GenerationInterval(pmf, float(lag), 0.0)

"""Regional epidemic indicators by rural-urban typology.

Rt by case-pair attribution, excess mortality over seasonal baselines,
mobility indicators from origin-destination matrices, fixed-effects panel
regressions and a renewal-process simulator that produces test data with
known ground truth.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    EPOCH,
    ComputationError,
    DailySeries,
    InputError,
    Region,
    Registry,
    Typology,
    WeeklySeries,
    group_median,
    load_daily_cases,
    load_regions,
    load_weekly_deaths,
)
from .gentime import GenerationInterval, discretize_gamma  # noqa: E402
from .rt import RtSeries, onset_day, wallinga_teunis  # noqa: E402

__all__ = [
    "EPOCH",
    "ComputationError",
    "DailySeries",
    "GenerationInterval",
    "InputError",
    "Region",
    "Registry",
    "RtSeries",
    "Typology",
    "WeeklySeries",
    "discretize_gamma",
    "group_median",
    "load_daily_cases",
    "load_regions",
    "load_weekly_deaths",
    "onset_day",
    "wallinga_teunis",
]

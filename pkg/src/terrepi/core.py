"""Domain types, ISO-week calendar helpers, CSV loaders and typology medians.

Every other module works on the types defined here.  Weekly data is keyed
by ISO-8601 ``(iso_year, iso_week)`` tuples; tabular outputs use the
``YYYY-Www`` label form, which sorts lexicographically in calendar order.
"""
from __future__ import annotations

import csv
import datetime as dt
import enum
import math
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

Week = tuple[int, int]

#: Day zero for onset counting.
EPOCH = dt.date(2020, 1, 1)


class InputError(ValueError):
    """Malformed or inconsistent input data (bad row, unknown key, ...)."""


class ComputationError(RuntimeError):
    """A numerical stage could not produce a result from valid input."""


class Typology(str, enum.Enum):
    URBAN = "urban"
    INTERMEDIATE = "intermediate"
    RURAL = "rural"

    @classmethod
    def parse(cls, token: str) -> "Typology":
        try:
            return cls(token.strip().lower())
        except ValueError:
            raise ValueError(f"unknown typology {token!r}") from None


TYPOLOGIES = (Typology.URBAN, Typology.INTERMEDIATE, Typology.RURAL)


# ---------------------------------------------------------------------------
# calendar


def iso_week(day: dt.date) -> Week:
    y, w, _ = day.isocalendar()
    return (y, w)


def week_start(week: Week) -> dt.date:
    """Monday of an ISO week."""
    return dt.date.fromisocalendar(week[0], week[1], 1)


def week_label(week: Week) -> str:
    return f"{week[0]:04d}-W{week[1]:02d}"


def parse_week(label: str) -> Week:
    text = label.strip()
    try:
        year, wk = text.split("-W")
        week = (int(year), int(wk))
        dt.date.fromisocalendar(week[0], week[1], 1)
    except ValueError:
        raise ValueError(f"malformed ISO week {label!r}, expected YYYY-Www") from None
    return week


def shift_week(week: Week, n: int) -> Week:
    return iso_week(week_start(week) + dt.timedelta(weeks=n))


def week_range(first: Week, last: Week) -> list[Week]:
    """Inclusive list of consecutive ISO weeks."""
    out = []
    cur = first
    while cur <= last:
        out.append(cur)
        cur = shift_week(cur, 1)
    return out


def parse_week_window(text: str) -> tuple[Week, Week]:
    """``2020-W06:2020-W52`` -> ((2020, 6), (2020, 52))."""
    try:
        a, b = text.split(":")
    except ValueError:
        raise ValueError(f"malformed week window {text!r}, expected YYYY-Www:YYYY-Www") from None
    lo, hi = parse_week(a), parse_week(b)
    if hi < lo:
        raise ValueError(f"week window {text!r} is reversed")
    return lo, hi


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class Region:
    region_id: str
    country: str
    typology: Typology
    population: float
    area: float
    density: float | None = None

    def __post_init__(self):
        if not self.region_id:
            raise ValueError("empty region_id")
        if not (self.population > 0):
            raise ValueError(f"population must be positive, got {self.population}")
        if not (self.area > 0):
            raise ValueError(f"area must be positive, got {self.area}")
        if self.density is None:
            object.__setattr__(self, "density", self.population / self.area)
        elif not (self.density > 0):
            raise ValueError(f"density must be positive, got {self.density}")


class Registry(Mapping):
    """Immutable id -> Region mapping, ordered by region_id."""

    def __init__(self, regions: Iterable[Region]):
        items: dict[str, Region] = {}
        for r in regions:
            if r.region_id in items:
                raise InputError(f"duplicate region_id {r.region_id!r}")
            items[r.region_id] = r
        self._items = dict(sorted(items.items()))

    def __getitem__(self, key: str) -> Region:
        return self._items[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __repr__(self) -> str:
        return f"Registry({len(self)} regions, {len(self.countries)} countries)"

    @property
    def countries(self) -> list[str]:
        return sorted({r.country for r in self._items.values()})

    def typology_of(self, region_id: str) -> Typology:
        return self._items[region_id].typology

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "region_id": [r.region_id for r in self.values()],
                "country": [r.country for r in self.values()],
                "typology": [r.typology.value for r in self.values()],
                "population": [r.population for r in self.values()],
                "area_km2": [r.area for r in self.values()],
                "density": [r.density for r in self.values()],
            }
        )


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DailySeries:
    region_id: str
    start_date: dt.date
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))
        if self.values.ndim != 1:
            raise ValueError("daily values must be one-dimensional")
        if np.any(self.values < 0) or np.any(~np.isfinite(self.values)):
            raise ValueError(f"{self.region_id}: daily values must be finite and non-negative")

    def __len__(self) -> int:
        return len(self.values)

    @property
    def dates(self) -> list[dt.date]:
        return [self.start_date + dt.timedelta(days=i) for i in range(len(self.values))]

    @property
    def end_date(self) -> dt.date:
        return self.start_date + dt.timedelta(days=len(self.values) - 1)

    def to_series(self) -> pd.Series:
        idx = pd.date_range(self.start_date, periods=len(self.values), freq="D")
        return pd.Series(self.values, index=idx, name=self.region_id)


@dataclass(frozen=True)
class WeeklySeries:
    region_id: str
    weeks: tuple[Week, ...]
    values: np.ndarray

    def __post_init__(self):
        weeks = tuple((int(y), int(w)) for y, w in self.weeks)
        object.__setattr__(self, "weeks", weeks)
        object.__setattr__(self, "values", _frozen(self.values))
        if len(weeks) != len(self.values):
            raise ValueError("one value per week required")
        if any(b <= a for a, b in zip(weeks, weeks[1:])):
            raise ValueError(f"{self.region_id}: weeks must be strictly increasing")

    def __len__(self) -> int:
        return len(self.weeks)

    def to_series(self) -> pd.Series:
        return pd.Series(self.values, index=[week_label(w) for w in self.weeks], name=self.region_id)

    def select(self, keep) -> "WeeklySeries":
        mask = np.array([bool(keep(w)) for w in self.weeks], dtype=bool)
        return WeeklySeries(self.region_id, tuple(w for w, m in zip(self.weeks, mask) if m), self.values[mask])


@dataclass(frozen=True)
class EpiPanel:
    regions: Registry
    cases: Mapping[str, DailySeries] = field(default_factory=dict)
    deaths: Mapping[str, WeeklySeries] = field(default_factory=dict)
    mobility: pd.DataFrame | None = None

    def __post_init__(self):
        for name, series in (("cases", self.cases), ("deaths", self.deaths)):
            missing = sorted(set(series) - set(self.regions))
            if missing:
                raise InputError(f"{name} reference unregistered regions: {missing[:5]}")
        if self.mobility is not None:
            missing = sorted(set(self.mobility["region_id"]) - set(self.regions))
            if missing:
                raise InputError(f"mobility references unregistered regions: {missing[:5]}")


# ---------------------------------------------------------------------------
# loaders


def _require_columns(path, header, expected):
    if header is None:
        raise InputError(f"{path}: empty file, header row is mandatory")
    missing = [c for c in expected if c not in header]
    if missing:
        raise InputError(f"{path}: missing columns {missing}; expected {list(expected)}")


def load_regions(path) -> Registry:
    """Read ``region_id,country,typology,population,area_km2[,density]``."""
    path = Path(path)
    regions = []
    seen: dict[str, int] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        _require_columns(path, reader.fieldnames, ("region_id", "country", "typology", "population", "area_km2"))
        for rowno, row in enumerate(reader, start=2):
            rid = (row["region_id"] or "").strip()
            if rid in seen:
                raise InputError(f"{path}:{rowno}: duplicate region_id {rid!r} (first seen on row {seen[rid]})")
            seen[rid] = rowno
            try:
                density = row.get("density")
                region = Region(
                    region_id=rid,
                    country=row["country"].strip(),
                    typology=Typology.parse(row["typology"]),
                    population=float(row["population"]),
                    area=float(row["area_km2"]),
                    density=float(density) if density not in (None, "") else None,
                )
            except (ValueError, TypeError, AttributeError) as exc:
                raise InputError(f"{path}:{rowno}: {exc}") from None
            regions.append(region)
    return Registry(regions)


def write_regions(registry: Registry, path) -> None:
    registry.frame().to_csv(path, index=False, float_format="%.10g", lineterminator="\n")


def _read_table(path, cols, dtypes=None) -> pd.DataFrame:
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise InputError(f"{path}: empty file, header row is mandatory") from None
    _require_columns(path, list(df.columns), cols)
    return df


def _bad_row(path, mask, what) -> None:
    if mask.any():
        rowno = int(np.flatnonzero(np.asarray(mask))[0]) + 2
        raise InputError(f"{path}:{rowno}: {what}")


def _numeric(path, df, col) -> np.ndarray:
    vals = pd.to_numeric(df[col].str.strip(), errors="coerce")
    _bad_row(path, vals.isna(), f"non-numeric {col}")
    vals = vals.to_numpy(dtype=float)
    _bad_row(path, ~np.isfinite(vals), f"non-finite {col}")
    _bad_row(path, vals < 0, f"negative {col}")
    return vals


def _check_registered(path, ids: pd.Series, registry) -> None:
    if registry is None:
        return
    _bad_row(path, ~ids.isin(list(registry)), "unregistered region_id")


def load_daily_cases(path, registry: Registry | None = None) -> dict[str, DailySeries]:
    """Daily NEW cases per region; days missing inside a region's span become 0."""
    path = Path(path)
    df = _read_table(path, ("region_id", "date", "new_cases"))
    ids = df["region_id"].str.strip()
    _check_registered(path, ids, registry)
    dates = pd.to_datetime(df["date"].str.strip(), format="%Y-%m-%d", errors="coerce")
    _bad_row(path, dates.isna(), "malformed date (expected YYYY-MM-DD)")
    counts = _numeric(path, df, "new_cases")
    frame = pd.DataFrame({"region_id": ids, "date": dates, "n": counts})
    _bad_row(path, frame.duplicated(["region_id", "date"]), "duplicate region_id/date")

    out = {}
    for rid, grp in frame.groupby("region_id", sort=True):
        start = grp["date"].min()
        offs = ((grp["date"] - start).dt.days).to_numpy()
        values = np.zeros(offs.max() + 1)
        values[offs] = grp["n"].to_numpy()
        out[rid] = DailySeries(rid, start.date(), values)
    return out


def load_weekly_deaths(path, registry: Registry | None = None) -> dict[str, WeeklySeries]:
    """Weekly deaths; absent weeks stay absent."""
    path = Path(path)
    df = _read_table(path, ("region_id", "iso_year", "iso_week", "deaths"))
    ids = df["region_id"].str.strip()
    _check_registered(path, ids, registry)
    year = pd.to_numeric(df["iso_year"], errors="coerce")
    week = pd.to_numeric(df["iso_week"], errors="coerce")
    _bad_row(path, year.isna() | week.isna(), "non-numeric iso_year/iso_week")
    year = year.astype(int).to_numpy()
    week = week.astype(int).to_numpy()
    ok = np.ones(len(df), dtype=bool)
    for i, (y, w) in enumerate(zip(year, week)):
        try:
            dt.date.fromisocalendar(int(y), int(w), 1)
        except ValueError:
            ok[i] = False
    _bad_row(path, ~ok, "invalid ISO year/week")
    deaths = _numeric(path, df, "deaths")
    frame = pd.DataFrame({"region_id": ids, "y": year, "w": week, "d": deaths})
    _bad_row(path, frame.duplicated(["region_id", "y", "w"]), "duplicate region_id/week")

    out = {}
    for rid, grp in frame.sort_values(["region_id", "y", "w"]).groupby("region_id", sort=True):
        weeks = tuple(zip(grp["y"].tolist(), grp["w"].tolist()))
        out[rid] = WeeklySeries(rid, weeks, grp["d"].to_numpy())
    return out


def write_daily_cases(series: Mapping[str, DailySeries], path) -> None:
    rows = []
    for rid in sorted(series):
        s = series[rid]
        dates = pd.date_range(s.start_date, periods=len(s), freq="D").strftime("%Y-%m-%d")
        rows.append(pd.DataFrame({"region_id": rid, "date": dates, "new_cases": s.values}))
    frame = pd.concat(rows) if rows else pd.DataFrame(columns=["region_id", "date", "new_cases"])
    frame.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")


def write_weekly_deaths(series: Mapping[str, WeeklySeries], path) -> None:
    rows = []
    for rid in sorted(series):
        s = series[rid]
        rows.append(
            pd.DataFrame(
                {
                    "region_id": rid,
                    "iso_year": [w[0] for w in s.weeks],
                    "iso_week": [w[1] for w in s.weeks],
                    "deaths": s.values,
                }
            )
        )
    frame = pd.concat(rows) if rows else pd.DataFrame(columns=["region_id", "iso_year", "iso_week", "deaths"])
    frame.to_csv(path, index=False, float_format="%.10g", lineterminator="\n")


# ---------------------------------------------------------------------------
# typology aggregation


def group_median(values: Mapping, registry: Registry):
    """Median across regions of each typology.

    ``values`` maps region_id to either a scalar or a ``pd.Series``.  Scalars
    give a ``pd.Series`` indexed by typology label; series give a DataFrame
    (union index x typology labels) where NaN marks indices at which no
    region of that typology has a value.  Typologies with no region at all
    are omitted.
    """
    unknown = sorted(set(values) - set(registry))
    if unknown:
        raise InputError(f"regions missing from registry: {unknown[:5]}")
    if not values:
        return pd.Series(dtype=float)
    sample = next(iter(values.values()))
    if np.isscalar(sample) or sample is None:
        by_typ: dict[str, list[float]] = {}
        for rid, v in values.items():
            if v is None or (isinstance(v, float) and math.isnan(v)):
                continue
            by_typ.setdefault(registry.typology_of(rid).value, []).append(float(v))
        return pd.Series(
            {t.value: float(np.median(by_typ[t.value])) for t in TYPOLOGIES if t.value in by_typ}, dtype=float
        )

    wide = pd.DataFrame({rid: s for rid, s in values.items()})
    wide = wide.sort_index()
    out = {}
    for t in TYPOLOGIES:
        cols = [rid for rid in wide.columns if registry.typology_of(rid) is t]
        if cols:
            out[t.value] = wide[cols].median(axis=1, skipna=True)
    return pd.DataFrame(out, index=wide.index)

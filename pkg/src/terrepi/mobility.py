"""Origin-destination matrices to weekly internal/inbound/outbound indicators.

Indicator tables are long DataFrames with one row per region, ISO week and
mobility type::

    region_id, country, iso_week, type, raw[, per_capita, normalized,
    per_capita_normalized, flags]

``iso_week`` uses the ``YYYY-Www`` label form.
"""
from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .core import InputError, Registry, Week, iso_week, parse_week, week_label

log = logging.getLogger(__name__)

TYPES = ("internal", "inbound", "outbound")
REFERENCE_WINDOW = ((2020, 6), (2020, 53))


@dataclass(frozen=True)
class OdmRecord:
    period: dt.date | Week
    origin_region: str
    destination_region: str
    movement_count: float

    def __post_init__(self):
        if not (self.movement_count >= 0):
            raise ValueError(f"movement_count must be >= 0, got {self.movement_count}")


def _period_to_week(text: str) -> tuple[str, str]:
    text = text.strip()
    if "-W" in text:
        return week_label(parse_week(text)), "weekly"
    return week_label(iso_week(dt.date.fromisoformat(text))), "daily"


def records_frame(records) -> pd.DataFrame:
    rows = []
    for r in records:
        if isinstance(r.period, dt.date):
            wk, gran = week_label(iso_week(r.period)), "daily"
        else:
            wk, gran = week_label(tuple(r.period)), "weekly"
        rows.append((wk, gran, r.origin_region, r.destination_region, float(r.movement_count)))
    return pd.DataFrame(rows, columns=["iso_week", "granularity", "origin", "destination", "count"])


def load_odm(path) -> pd.DataFrame:
    """Read ``period,origin,destination,count`` with YYYY-MM-DD or YYYY-Www periods."""
    path = Path(path)
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise InputError(f"{path}: empty file, header row is mandatory") from None
    return odm_frame(df, source=str(path))


def odm_frame(df: pd.DataFrame, source: str = "odm") -> pd.DataFrame:
    """Parse a raw ``period,origin,destination,count`` table into aggregation form."""
    missing = [c for c in ("period", "origin", "destination", "count") if c not in df.columns]
    if missing:
        raise InputError(f"{source}: missing columns {missing}")
    periods = df["period"].astype(str)
    # many rows share few distinct periods
    lookup = {}
    for p in periods.unique():
        try:
            lookup[p] = _period_to_week(p)
        except ValueError:
            row = int(np.flatnonzero((periods == p).to_numpy())[0]) + 2
            raise InputError(f"{source}:{row}: malformed period {p!r}") from None
    counts = pd.to_numeric(df["count"], errors="coerce")
    bad = counts.isna() | (counts < 0)
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0]) + 2
        raise InputError(f"{source}:{row}: count must be a non-negative number")
    return pd.DataFrame(
        {
            "iso_week": periods.map(lambda p: lookup[p][0]),
            "granularity": periods.map(lambda p: lookup[p][1]),
            "origin": df["origin"].astype(str).str.strip(),
            "destination": df["destination"].astype(str).str.strip(),
            "count": counts.astype(float),
        }
    )


def weekly_aggregate(odm, registry: Registry) -> pd.DataFrame:
    """Raw weekly indicator sums per region.

    Entries ``origin == destination`` are internal movements; cross-region
    entries count as outbound for the origin and inbound for the destination.
    Records touching unregistered regions are dropped; the count is kept in
    ``result.attrs["dropped_records"]``.
    """
    if not isinstance(odm, pd.DataFrame):
        odm = records_frame(odm)
    elif "period" in odm.columns:
        odm = odm_frame(odm)
    known = set(registry)
    inside = odm["origin"].isin(known) & odm["destination"].isin(known)
    dropped = int((~inside).sum())
    if dropped:
        log.warning("dropped %d ODM records touching unregistered regions", dropped)
    df = odm.loc[inside]
    country = {rid: registry[rid].country for rid in registry}
    df = df.assign(country=df["origin"].map(country))

    mixed = df.groupby(["country", "iso_week"])["granularity"].nunique()
    mixed = mixed[mixed > 1]
    if len(mixed):
        c, w = mixed.index[0]
        raise InputError(f"mixed daily and weekly ODM records for country {c} in {w}; harmonise upstream")

    same = df["origin"] == df["destination"]
    internal = df[same].groupby(["destination", "iso_week"])["count"].sum()
    cross = df[~same]
    inbound = cross.groupby(["destination", "iso_week"])["count"].sum()
    outbound = cross.groupby(["origin", "iso_week"])["count"].sum()
    for s in (internal, inbound, outbound):
        s.index = s.index.set_names(["region_id", "iso_week"])

    keys = pd.concat(
        [
            df[["origin", "iso_week"]].set_axis(["region_id", "iso_week"], axis=1),
            df[["destination", "iso_week"]].set_axis(["region_id", "iso_week"], axis=1),
        ]
    ).drop_duplicates()
    wide = keys.set_index(["region_id", "iso_week"]).sort_index()
    wide["internal"] = internal.reindex(wide.index).fillna(0.0)
    wide["inbound"] = inbound.reindex(wide.index).fillna(0.0)
    wide["outbound"] = outbound.reindex(wide.index).fillna(0.0)
    out = wide.reset_index().melt(id_vars=["region_id", "iso_week"], value_vars=list(TYPES),
                                  var_name="type", value_name="raw")
    out.insert(1, "country", out["region_id"].map(country))
    out = out.sort_values(["region_id", "iso_week", "type"], kind="stable").reset_index(drop=True)
    out.attrs["dropped_records"] = dropped
    return out


def _in_window(labels: pd.Series, window) -> pd.Series:
    lo, hi = week_label(window[0]), week_label(window[1])
    return (labels >= lo) & (labels <= hi)


def _minmax(ind: pd.DataFrame, value: str, out: str, window, mode: str) -> pd.DataFrame:
    if mode not in ("observation", "aggregate"):
        raise ValueError(f"unknown normalisation mode {mode!r}")
    ind = ind.copy()
    inwin = _in_window(ind["iso_week"], window)
    ref = ind.loc[inwin & ind[value].notna()]
    if mode == "aggregate":
        ref = ref.groupby(["country", "type", "region_id"])[value].mean().reset_index()
    stats = ref.groupby(["country", "type"])[value].agg(["min", "max"])
    for key in set(zip(ind["country"], ind["type"])) - set(stats.index):
        raise InputError(f"reference window is empty for country {key[0]}, type {key[1]}")
    lo = pd.MultiIndex.from_frame(ind[["country", "type"]])
    m = stats["min"].reindex(lo).to_numpy()
    M = stats["max"].reindex(lo).to_numpy()
    span = M - m
    degenerate = span <= 0
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = np.where(degenerate, 0.0, (ind[value].to_numpy() - m) / np.where(degenerate, 1.0, span))
    ind[out] = norm
    flags = ind.get("flags", pd.Series("", index=ind.index)).fillna("")
    tag = {"normalized": "", "per_capita_normalized": "pc_"}.get(out, out + "_")
    add = np.where(degenerate, tag + "degenerate", "")
    add = np.where(~degenerate & ((norm < 0) | (norm > 1)), tag + "out_of_range", add)
    flags = [";".join(x for x in (f, a) if x) for f, a in zip(flags, add)]
    ind["flags"] = flags
    if degenerate.any():
        bad = sorted(set(zip(ind.loc[degenerate, "country"], ind.loc[degenerate, "type"])))
        log.warning("degenerate normalisation (max == min) for %s", bad[:5])
    return ind


def minmax_normalize(ind: pd.DataFrame, registry: Registry | None = None, reference_window=REFERENCE_WINDOW,
                     mode: str = "observation") -> pd.DataFrame:
    """Scale raw values to [0, 1] per (country, type) over the reference window.

    ``mode="observation"`` uses the min/max over all region-week values in
    the window; ``mode="aggregate"`` uses the min/max of the per-region window
    means.  Values outside the window reuse the same bounds and are flagged
    ``out_of_range`` if they fall outside [0, 1].
    """
    if "country" not in ind and registry is not None:
        ind = ind.assign(country=ind["region_id"].map(lambda r: registry[r].country))
    return _minmax(ind, "raw", "normalized", reference_window, mode)


def per_capita(ind: pd.DataFrame, registry: Registry, reference_window=REFERENCE_WINDOW,
               mode: str = "observation") -> pd.DataFrame:
    """Add ``per_capita`` (raw / population) and its min-max normalisation."""
    known = ind["region_id"].isin(list(registry))
    if not known.all():
        skipped = sorted(ind.loc[~known, "region_id"].unique())
        log.warning("no population for %d regions, skipped: %s", len(skipped), skipped[:5])
        ind = ind.loc[known]
    pop = ind["region_id"].map(lambda r: registry[r].population)
    ind = ind.assign(per_capita=ind["raw"] / pop)
    return _minmax(ind, "per_capita", "per_capita_normalized", reference_window, mode)


def indicators(odm, registry: Registry, reference_window=REFERENCE_WINDOW, mode: str = "observation") -> pd.DataFrame:
    """Aggregate, normalise and add per-capita variants in one go."""
    ind = weekly_aggregate(odm, registry)
    dropped = ind.attrs.get("dropped_records", 0)
    ind = minmax_normalize(ind, registry, reference_window, mode)
    ind = per_capita(ind, registry, reference_window, mode)
    ind = ind[["region_id", "country", "iso_week", "type", "raw", "per_capita", "normalized",
               "per_capita_normalized", "flags"]].reset_index(drop=True)
    ind.attrs["dropped_records"] = dropped
    return ind


def relative_change(ind: pd.DataFrame, reference_week: Week, mobility_type: str = "internal",
                    column: str = "raw"):
    """Percent change against each region's value in ``reference_week``.

    Returns ``(frame, warnings)``; regions whose reference value is zero or
    absent are excluded.
    """
    sub = ind[ind["type"] == mobility_type]
    label = week_label(reference_week)
    ref = sub[sub["iso_week"] == label].set_index("region_id")[column]
    warnings = []
    for rid in sorted(set(sub["region_id"])):
        if rid not in ref.index or not (ref[rid] > 0):
            msg = f"{rid}: no positive {mobility_type} value in {label}, excluded"
            log.warning(msg)
            warnings.append(msg)
    good = ref[ref > 0]
    sub = sub[sub["region_id"].isin(good.index)]
    base = sub["region_id"].map(good)
    out = pd.DataFrame(
        {
            "region_id": sub["region_id"],
            "iso_week": sub["iso_week"],
            "type": mobility_type,
            "pct_change": 100.0 * (sub[column] - base) / base,
        }
    ).sort_values(["region_id", "iso_week"]).reset_index(drop=True)
    return out, warnings

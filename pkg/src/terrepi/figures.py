"""Chart data and minimal SVG renderings from upstream stage outputs.

Each ``figN_data`` function is a pure function of upstream tables; the CSV it
returns is the tested artifact and the SVG is a plain rendering of it.
"""
from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from .core import TYPOLOGIES, InputError, Registry, group_median, load_regions  # noqa: E402

log = logging.getLogger(__name__)

CSV_OPTS = dict(index=False, float_format="%.10g", lineterminator="\n")
COLOURS = {"urban": "#b2182b", "intermediate": "#ef8a62", "rural": "#2166ac"}

# file -> (stage directory, command producing it)
UPSTREAM = {
    "regions": ("data", "regions.csv", "simulate"),
    "onsets": ("rt", "onset.csv", "rt"),
    "rt_aligned": ("rt", "rt_aligned.csv", "rt --align-onset N"),
    "excess": ("excess", "excess.csv", "excess"),
    "excess_aggregate": ("excess", "excess_aggregate.csv", "excess"),
    "mobility": ("mobility", "mobility.csv", "mobility --per-capita"),
    "relative_change": ("mobility", "relative_change.csv", "mobility --relative-to WEEK"),
    "shifts": ("regress", "shifts_*.csv", "regress --shifts=-3:3"),
}


def fig1_data(onsets: pd.DataFrame, registry: Registry) -> pd.DataFrame:
    """Cumulative share of regions past onset, per typology and day since 2020-01-01."""
    reached = onsets[onsets["reached"].astype(str).str.lower().isin(["true", "1"])]
    days = reached["onset_day"].astype(int)
    if days.empty:
        return pd.DataFrame(columns=["typology", "onset_day", "regions_reached", "share_reached"])
    grid = np.arange(days.min(), days.max() + 1)
    typ = onsets["region_id"].map(lambda r: registry.typology_of(r).value)
    rows = []
    for t in TYPOLOGIES:
        total = int((typ == t.value).sum())
        if total == 0:
            continue
        mine = np.sort(days[typ.loc[reached.index] == t.value].to_numpy())
        cum = np.searchsorted(mine, grid, side="right")
        rows.append(pd.DataFrame({"typology": t.value, "onset_day": grid, "regions_reached": cum,
                                  "share_reached": cum / total}))
    return pd.concat(rows, ignore_index=True)


def fig2_data(aligned: pd.DataFrame, registry: Registry) -> pd.DataFrame:
    """Median Rt by typology against days since each region's first case.

    ``aligned`` is long: region_id, day_since_first_case, rt.
    """
    series = {rid: g.set_index("day_since_first_case")["rt"] for rid, g in aligned.groupby("region_id")}
    med = group_median(series, registry)
    med.index.name = "day_since_first_case"
    out = med.reset_index().melt(id_vars="day_since_first_case", var_name="typology", value_name="median_rt")
    out = out.dropna(subset=["median_rt"])
    order = {t.value: i for i, t in enumerate(TYPOLOGIES)}
    out = out.sort_values(["typology", "day_since_first_case"], key=lambda s: s.map(order) if s.name == "typology" else s)
    return out[["typology", "day_since_first_case", "median_rt"]].reset_index(drop=True)


def fig3_data(aggregate: pd.DataFrame) -> pd.DataFrame:
    return aggregate[["iso_week", "total_excess"] + [t.value for t in TYPOLOGIES]].copy()


def fig4_data(mobility: pd.DataFrame, registry: Registry) -> pd.DataFrame:
    """Median normalised absolute and per-capita internal mobility per typology and week."""
    internal = mobility[mobility["type"] == "internal"].copy()
    internal["typology"] = internal["region_id"].map(lambda r: registry.typology_of(r).value)
    med = internal.groupby(["typology", "iso_week"])[["normalized", "per_capita_normalized"]].median()
    med = med.rename(columns={"normalized": "median_internal", "per_capita_normalized": "median_internal_pca"})
    out = med.reset_index()
    order = {t.value: i for i, t in enumerate(TYPOLOGIES)}
    out = out.sort_values(["typology", "iso_week"], key=lambda s: s.map(order) if s.name == "typology" else s)
    return out.reset_index(drop=True)


def fig5_data(change: pd.DataFrame, registry: Registry, country: str | None = None) -> pd.DataFrame:
    """Relative internal mobility change for the regions of one country."""
    countries = change["region_id"].map(lambda r: registry[r].country)
    if country is None:
        country = sorted(countries.unique())[0] if len(countries) else ""
    sub = change[countries == country]
    if sub.empty:
        raise InputError(f"no relative-change rows for country {country!r}")
    out = sub[["region_id", "iso_week", "pct_change"]].copy()
    out.insert(0, "country", country)
    return out.sort_values(["region_id", "iso_week"]).reset_index(drop=True)


def fig6_data(shifts: pd.DataFrame) -> pd.DataFrame:
    return shifts[["wave", "shift", "coef", "lower95", "upper95"]].sort_values(["wave", "shift"]).reset_index(drop=True)


# ---------------------------------------------------------------------------
# rendering


def _save(fig, path: Path) -> None:
    # fixed hash salt and no date keep the SVG byte-identical across runs
    with matplotlib.rc_context({"svg.hashsalt": "terrepi", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def _lines(data, x, y, group, xlabel, ylabel, title):
    fig, ax = plt.subplots(figsize=(7, 4))
    for key, g in data.groupby(group, sort=False):
        ax.plot(g[x].to_numpy(), g[y].to_numpy(), label=str(key), color=COLOURS.get(key))
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(frameon=False)
    return fig, ax


def _week_ticks(ax, labels):
    step = max(1, len(labels) // 8)
    ax.set_xticks(range(0, len(labels), step))
    ax.set_xticklabels(labels[::step], rotation=45, ha="right", fontsize=7)


def render_fig1(data, path):
    fig, _ = _lines(data, "onset_day", "share_reached", "typology", "days since 2020-01-01",
                    "share of regions past onset", "Onset by typology")
    _save(fig, path)


def render_fig2(data, path):
    fig, ax = _lines(data, "day_since_first_case", "median_rt", "typology", "days since first case",
                     "median Rt", "Median Rt by typology")
    ax.axhline(1.0, color="grey", lw=0.8, ls="--")
    _save(fig, path)


def render_fig3(data, path):
    fig, ax = plt.subplots(figsize=(8, 4))
    labels = data["iso_week"].tolist()
    x = np.arange(len(labels))
    ax.bar(x, data["total_excess"].fillna(0).to_numpy(), color="#cccccc", label="total excess")
    ax.set_ylabel("total excess deaths")
    ax2 = ax.twinx()
    for t in TYPOLOGIES:
        ax2.plot(x, data[t.value].to_numpy(), color=COLOURS[t.value], label=t.value)
    ax2.set_ylabel("median excess (%)")
    _week_ticks(ax, labels)
    ax2.legend(frameon=False, loc="upper right")
    ax.set_title("Excess mortality")
    _save(fig, path)


def render_fig4(data, path):
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
    for ax, col, title in zip(axes, ("median_internal", "median_internal_pca"), ("absolute", "per capita")):
        for key, g in data.groupby("typology", sort=False):
            ax.plot(range(len(g)), g[col].to_numpy(), label=key, color=COLOURS.get(key))
        _week_ticks(ax, data["iso_week"].drop_duplicates().tolist())
        ax.set_title(f"Median internal mobility, {title}")
    axes[0].set_ylabel("normalised mobility")
    axes[0].legend(frameon=False)
    _save(fig, path)


def render_fig5(data, path):
    wide = data.pivot(index="region_id", columns="iso_week", values="pct_change")
    fig, ax = plt.subplots(figsize=(9, max(3, 0.25 * len(wide))))
    lim = float(np.nanmax(np.abs(wide.to_numpy()))) if wide.size else 1.0
    im = ax.imshow(wide.to_numpy(), aspect="auto", cmap="RdBu_r", vmin=-lim, vmax=lim, interpolation="nearest")
    ax.set_yticks(range(len(wide)))
    ax.set_yticklabels(wide.index, fontsize=6)
    _week_ticks(ax, wide.columns.tolist())
    fig.colorbar(im, ax=ax, label="change in internal mobility (%)")
    ax.set_title(f"Internal mobility change, {data['country'].iloc[0]}")
    _save(fig, path)


def render_fig6(data, path):
    fig, ax = plt.subplots(figsize=(6, 4))
    for i, (wave, g) in enumerate(data.groupby("wave", sort=True)):
        x = g["shift"].to_numpy() + (i - 0.5) * 0.15
        c = g["coef"].to_numpy()
        ax.errorbar(x, c, yerr=[c - g["lower95"].to_numpy(), g["upper95"].to_numpy() - c], fmt="o", capsize=3,
                    label=f"{wave} wave")
    ax.axhline(0.0, color="grey", lw=0.8)
    ax.set_xlabel("shift of internal mobility (weeks)")
    ax.set_ylabel("coefficient")
    ax.legend(frameon=False)
    _save(fig, path)


def _upstream(run_dir: Path, name: str, overrides: dict) -> list[Path]:
    stage, fname, command = UPSTREAM[name]
    given = overrides.get(name)
    if given:
        paths = [Path(p) for p in ([given] if isinstance(given, (str, Path)) else given)]
    else:
        paths = sorted((run_dir / stage).glob(fname)) if "*" in fname else [run_dir / stage / fname]
    missing = [p for p in paths if not p.exists()]
    if not paths or missing:
        where = missing[0] if missing else run_dir / stage / fname
        raise InputError(f"missing upstream output {where}; run `terrepi {command}` first")
    return paths


def make_figures(run_dir, out_dir, overrides: dict | None = None, country: str | None = None) -> list[Path]:
    """Build fig1..fig6 CSV + SVG pairs from a run directory's stage outputs."""
    run_dir, out_dir = Path(run_dir), Path(out_dir)
    overrides = overrides or {}
    paths = {name: _upstream(run_dir, name, overrides) for name in UPSTREAM}
    registry = load_regions(paths["regions"][0])

    def read(name, **kw):
        return pd.concat([pd.read_csv(p, **kw) for p in paths[name]], ignore_index=True)

    data = {
        "fig1": fig1_data(read("onsets", dtype={"region_id": str}), registry),
        "fig2": fig2_data(read("rt_aligned", dtype={"region_id": str}), registry),
        "fig3": fig3_data(read("excess_aggregate")),
        "fig4": fig4_data(read("mobility", dtype={"region_id": str}), registry),
        "fig5": fig5_data(read("relative_change", dtype={"region_id": str}), registry, country),
        "fig6": fig6_data(read("shifts")),
    }
    render = {"fig1": render_fig1, "fig2": render_fig2, "fig3": render_fig3, "fig4": render_fig4,
              "fig5": render_fig5, "fig6": render_fig6}
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, frame in data.items():
        frame.to_csv(out_dir / f"{name}.csv", **CSV_OPTS)
        render[name](frame, out_dir / f"{name}.svg")
        written += [out_dir / f"{name}.csv", out_dir / f"{name}.svg"]
    return written

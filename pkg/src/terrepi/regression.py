"""Country fixed-effects OLS of weekly Rt on mobility, typology and demography."""
from __future__ import annotations

import datetime as dt
import logging
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import linalg, stats

from .core import InputError, Registry, Typology, parse_week, shift_week, week_label, week_start
from .rt import OnsetRecord

log = logging.getLogger(__name__)

PANEL_COLUMNS = ["region_id", "country", "week", "rt", "intermediate", "rural", "internal", "inbound",
                 "outbound", "internal_pca", "population", "density"]

LABELS = {
    "intermediate": "Intermediate",
    "rural": "Rural",
    "internal": "Internal",
    "inbound": "Inbound",
    "outbound": "Outbound",
    "internal_pca": "Internal pca",
    "population": "Population",
    "density": "Population density",
}

#: Columns (1)-(9) of both regression tables.
TABLE_SPECS = [
    ["intermediate", "rural"],
    ["internal"],
    ["inbound"],
    ["outbound"],
    ["internal_pca"],
    ["population"],
    ["density"],
    ["intermediate", "rural", "internal"],
    ["intermediate", "rural", "internal", "population", "density"],
]


def stars(p: float) -> str:
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.1:
        return "*"
    return ""


class FitError(InputError):
    pass


@dataclass(frozen=True)
class RegressionResult:
    spec_id: str
    names: tuple[str, ...]
    coef: np.ndarray
    se: np.ndarray
    tstat: np.ndarray
    pvalue: np.ndarray
    n_observations: int
    r_squared: float
    adjusted_r_squared: float
    fixed_effect_levels: int
    df_resid: int
    n_params: int
    covariance: str = "classical"

    @property
    def stars(self) -> tuple[str, ...]:
        return tuple(stars(p) for p in self.pvalue)

    def __getitem__(self, name: str) -> dict:
        i = self.names.index(name)
        return {"coef": self.coef[i], "se": self.se[i], "t": self.tstat[i], "p": self.pvalue[i],
                "stars": stars(self.pvalue[i])}

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "spec_id": self.spec_id,
                "variable": list(self.names),
                "coef": self.coef,
                "se": self.se,
                "t": self.tstat,
                "p": self.pvalue,
                "stars": list(self.stars),
                "n_obs": self.n_observations,
                "r2": self.r_squared,
                "adj_r2": self.adjusted_r_squared,
                "fe_levels": self.fixed_effect_levels,
            }
        )


@dataclass(frozen=True)
class FailedFit:
    spec_id: str
    message: str


@dataclass
class TableResult:
    results: list
    title: str = ""
    notes: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.results)

    def __getitem__(self, i):
        return self.results[i]

    def frame(self) -> pd.DataFrame:
        ok = [r.frame() for r in self.results if isinstance(r, RegressionResult)]
        return pd.concat(ok, ignore_index=True) if ok else pd.DataFrame()

    def render(self) -> str:
        return render_table(self.results, self.title)


# ---------------------------------------------------------------------------
# panel construction


def _scale(values: pd.Series, how: str) -> pd.Series:
    if how == "raw":
        return values.astype(float)
    if how == "log":
        return np.log(values.astype(float))
    if how == "minmax":
        lo, hi = values.min(), values.max()
        return (values - lo) / (hi - lo) if hi > lo else values * 0.0
    raise ValueError(f"unknown size transform {how!r}")


def build_panel(
    rt_weekly: pd.DataFrame,
    mobility: pd.DataFrame,
    registry: Registry,
    wave: str = "first",
    onsets: Mapping[str, OnsetRecord] | None = None,
    first_wave_days: int = 28,
    second_wave_after: dt.date = dt.date(2020, 8, 31),
    second_wave_until: dt.date | None = None,
    size_transform: str = "minmax",
    drop_censored: bool = True,
):
    """Assemble PanelRow records for one wave.

    ``rt_weekly`` has columns ``region_id, week, rt[, censored]``; ``mobility``
    is an indicator table (see :mod:`terrepi.mobility`).  Returns
    ``(panel, meta)`` where ``meta`` reports row counts at each filter.
    """
    meta: dict = {"wave": wave}
    rt = rt_weekly.copy()
    rt = rt[rt["region_id"].isin(list(registry))]
    meta["rt_rows"] = len(rt)
    if drop_censored and "censored" in rt:
        cens = rt["censored"].astype(str).str.lower().isin(["true", "1"])
        meta["dropped_censored"] = int(cens.sum())
        rt = rt[~cens]
    starts = rt["week"].map(lambda w: week_start(parse_week(w)))

    if wave == "first":
        if onsets is None:
            raise InputError("first-wave panel needs onset records")
        lo = rt["region_id"].map(lambda r: onsets[r].date if r in onsets and onsets[r].reached else None)
        has = lo.notna()
        meta["regions_without_onset"] = int(rt.loc[~has, "region_id"].nunique())
        rt, starts, lo = rt[has], starts[has], lo[has]
        hi = lo.map(lambda d: d + dt.timedelta(days=first_wave_days - 1))
        ends = starts.map(lambda d: d + dt.timedelta(days=6))
        keep = (ends >= lo) & (starts <= hi)
        filt = f"{first_wave_days} days since onset"
    elif wave == "second":
        keep = starts > second_wave_after
        if second_wave_until is not None:
            keep &= starts <= second_wave_until
        filt = f"weeks starting after {second_wave_after.isoformat()}"
    else:
        raise ValueError(f"unknown wave {wave!r}")
    rt = rt[keep]
    meta["window_rows"] = len(rt)
    if rt.empty:
        raise InputError(f"empty {wave}-wave panel: no Rt weeks left after filter '{filt}'")

    mob = mobility.pivot_table(index=["region_id", "iso_week"], columns="type", values="normalized", aggfunc="first")
    pca = mobility[mobility["type"] == "internal"].set_index(["region_id", "iso_week"])["per_capita_normalized"]
    key = pd.MultiIndex.from_arrays([rt["region_id"], rt["week"]])
    panel = pd.DataFrame(
        {
            "region_id": rt["region_id"].to_numpy(),
            "country": rt["region_id"].map(lambda r: registry[r].country).to_numpy(),
            "week": rt["week"].to_numpy(),
            "rt": rt["rt"].astype(float).to_numpy(),
            "intermediate": rt["region_id"].map(lambda r: int(registry[r].typology is Typology.INTERMEDIATE)).to_numpy(),
            "rural": rt["region_id"].map(lambda r: int(registry[r].typology is Typology.RURAL)).to_numpy(),
        }
    )
    for col in ("internal", "inbound", "outbound"):
        panel[col] = mob[col].reindex(key).to_numpy() if col in mob else np.nan
    panel["internal_pca"] = pca.reindex(key).to_numpy()
    panel["population"] = rt["region_id"].map(lambda r: registry[r].population).to_numpy()
    panel["density"] = rt["region_id"].map(lambda r: registry[r].density).to_numpy()

    missing = panel.isna().any(axis=1)
    meta["dropped_missing"] = int(missing.sum())
    panel = panel[~missing].reset_index(drop=True)
    if panel.empty:
        raise InputError(f"empty {wave}-wave panel: no row has complete mobility data ({filt})")
    panel["population"] = _scale(panel["population"], size_transform)
    panel["density"] = _scale(panel["density"], size_transform)
    panel = panel.sort_values(["region_id", "week"], kind="stable").reset_index(drop=True)
    meta["rows"] = len(panel)
    meta["regions"] = int(panel["region_id"].nunique())
    return panel[PANEL_COLUMNS], meta


# ---------------------------------------------------------------------------
# estimation


def design_matrix(panel: pd.DataFrame, regressors: Sequence[str], fixed_effects: str | None = "country"):
    """``[regressors | intercept | FE dummies]`` with the first level as reference."""
    missing = [c for c in regressors if c not in panel]
    if missing:
        raise FitError(f"panel lacks regressors {missing}")
    cols = [panel[c].to_numpy(dtype=float) for c in regressors]
    names = list(regressors)
    cols.append(np.ones(len(panel)))
    names.append("const")
    levels = 0
    if fixed_effects:
        cats = sorted(panel[fixed_effects].astype(str).unique())
        levels = len(cats)
        codes = panel[fixed_effects].astype(str).to_numpy()
        for c in cats[1:]:
            cols.append((codes == c).astype(float))
            names.append(f"fe[{c}]")
    return np.column_stack(cols), names, levels


def ols_fit(panel: pd.DataFrame, regressors: Sequence[str], fixed_effects: str | None = "country",
            spec_id: str = "", covariance: str = "classical") -> RegressionResult:
    """OLS through a column-pivoted QR factorisation.

    Reported rows are the non-FE regressors; R-squared includes the dummies.
    ``covariance`` is ``"classical"`` or ``"hc1"``.
    """
    X, names, levels = design_matrix(panel, regressors, fixed_effects)
    y = panel["rt"].to_numpy(dtype=float)
    n, p = X.shape
    if n <= p:
        raise FitError(f"{spec_id or 'fit'}: {n} observations for {p} parameters")
    Q, R, piv = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    tol = diag[0] * max(n, p) * np.finfo(float).eps
    rank = int((diag > tol).sum())
    if rank < p:
        bad = sorted(names[i] for i in piv[rank:])
        raise FitError(f"{spec_id or 'fit'}: design is rank deficient; collinear columns {bad}")
    beta_p = linalg.solve_triangular(R, Q.T @ y)
    beta = np.empty(p)
    beta[piv] = beta_p
    resid = y - X @ beta
    rss = float(resid @ resid)
    df = n - p
    Rinv = linalg.solve_triangular(R, np.eye(p))
    bread_p = Rinv @ Rinv.T
    bread = np.empty((p, p))
    bread[np.ix_(piv, piv)] = bread_p
    if covariance == "classical":
        V = rss / df * bread
    elif covariance == "hc1":
        meat = (X * resid[:, None] ** 2).T @ X
        V = n / df * bread @ meat @ bread
    else:
        raise ValueError(f"unknown covariance {covariance!r}")
    se = np.sqrt(np.diag(V))
    tstat = beta / se
    pval = 2 * stats.t.sf(np.abs(tstat), df)
    tss = float(((y - y.mean()) ** 2).sum())
    r2 = 1 - rss / tss if tss > 0 else 0.0
    adj = 1 - (1 - r2) * (n - 1) / df
    k = len(regressors)
    return RegressionResult(spec_id, tuple(names[:k]), beta[:k], se[:k], tstat[:k], pval[:k], n, r2, adj,
                            levels, df, p, covariance)


def run_table(panel: pd.DataFrame, table_spec=TABLE_SPECS, fixed_effects: str | None = "country",
              title: str = "", covariance: str = "classical") -> TableResult:
    results = []
    for i, formula in enumerate(table_spec, start=1):
        sid = f"({i})"
        try:
            results.append(ols_fit(panel, formula, fixed_effects, spec_id=sid, covariance=covariance))
        except InputError as exc:
            log.warning("column %s failed: %s", sid, exc)
            results.append(FailedFit(sid, str(exc)))
    return TableResult(results, title)


def _fmt(x: float) -> str:
    # two decimals, or one significant digit for small magnitudes
    ax = abs(x)
    if ax >= 0.1 or ax == 0 or not math.isfinite(x):
        return f"{x:.2f}"
    return f"{x:.{-int(math.floor(math.log10(ax)))}f}"


def render_table(results, title: str = "") -> str:
    """Fixed-width text table: coefficients with stars, SEs in parentheses, fit rows."""
    cols = [r.spec_id for r in results]
    variables = []
    for r in results:
        if isinstance(r, RegressionResult):
            variables.extend(v for v in r.names if v not in variables)
    order = [v for v in LABELS if v in variables] + [v for v in variables if v not in LABELS]
    lab_w = max([len(LABELS.get(v, v)) for v in order] + [len("Adjusted R2"), 12])
    cell_w = 12
    lines = []
    rule = "=" * (lab_w + (cell_w + 1) * len(cols))
    if title:
        lines.append(title)
    lines.append(rule)
    lines.append(" " * lab_w + "".join(f" {c:>{cell_w}}" for c in cols))
    lines.append("-" * len(rule))
    for v in order:
        top, bottom = [], []
        for r in results:
            if isinstance(r, RegressionResult) and v in r.names:
                d = r[v]
                top.append(f"{_fmt(d['coef'])}{d['stars']}")
                bottom.append(f"({_fmt(d['se'])})")
            else:
                top.append("")
                bottom.append("")
        lines.append(f"{LABELS.get(v, v):<{lab_w}}" + "".join(f" {c:>{cell_w}}" for c in top))
        lines.append(" " * lab_w + "".join(f" {c:>{cell_w}}" for c in bottom))
    lines.append("-" * len(rule))

    def row(label, fn):
        cells = [fn(r) if isinstance(r, RegressionResult) else "failed" for r in results]
        lines.append(f"{label:<{lab_w}}" + "".join(f" {c:>{cell_w}}" for c in cells))

    row("Observations", lambda r: f"{r.n_observations:,}")
    row("R2", lambda r: f"{r.r_squared:.2f}")
    row("Adjusted R2", lambda r: f"{r.adjusted_r_squared:.2f}")
    row("Country FE", lambda r: "yes" if r.fixed_effect_levels else "no")
    lines.append(rule)
    lines.append("Note: *p<0.1; **p<0.05; ***p<0.01")
    for r in results:
        if isinstance(r, FailedFit):
            lines.append(f"{r.spec_id} failed: {r.message}")
    return "\n".join(lines) + "\n"


def lag_shift_regress(panel: pd.DataFrame, internal: Mapping | pd.Series | None = None, shifts=range(-3, 4),
                      fixed_effects: str | None = "country", level: float = 0.95):
    """Regress Rt in week w on internal mobility in week w+s for each shift s.

    ``internal`` maps ``(region_id, iso_week_label)`` to normalised internal
    mobility; by default the panel's own ``internal`` column is used (so
    shifts only reach weeks that are themselves in the panel).  Returns
    ``(frame, warnings)``.
    """
    if internal is None:
        internal = panel.set_index(["region_id", "week"])["internal"]
    lookup = dict(internal.items()) if isinstance(internal, pd.Series) else dict(internal)
    rows = []
    warnings = []
    weeks = panel["week"].map(parse_week)
    for s in shifts:
        target = [week_label(shift_week(w, s)) for w in weeks]
        vals = np.array([lookup.get((r, t), np.nan) for r, t in zip(panel["region_id"], target)], dtype=float)
        ok = ~np.isnan(vals)
        sub = panel.loc[ok].assign(internal=vals[ok])
        try:
            res = ols_fit(sub, ["internal"], fixed_effects, spec_id=f"shift{s:+d}")
        except InputError as exc:
            msg = f"shift {s:+d} omitted: {exc}"
            log.warning(msg)
            warnings.append(msg)
            continue
        q = stats.t.ppf(0.5 + level / 2, res.df_resid)
        c, e = float(res.coef[0]), float(res.se[0])
        rows.append({"shift": s, "coef": c, "se": e, "lower95": c - q * e, "upper95": c + q * e,
                     "p": float(res.pvalue[0]), "n_obs": res.n_observations})
    return pd.DataFrame(rows, columns=["shift", "coef", "se", "lower95", "upper95", "p", "n_obs"]), warnings

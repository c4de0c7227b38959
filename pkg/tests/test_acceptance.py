"""Acceptance criteria, one PASS/FAIL line each (see the summary section of the pytest report)."""
import datetime as dt
import hashlib
import json
import time
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from terrepi.cli import demo_config, run_pipeline
from terrepi.core import DailySeries, WeeklySeries, iso_week, parse_week, week_range
from terrepi.gentime import discretize_gamma
from terrepi.mobility import OdmRecord, indicators, relative_change
from terrepi.mortality import (
    ExcessSeries,
    _sum_to_zero,
    aggregate_excess,
    cyclic_bspline_basis,
    excess_for_regions,
    fit_baseline,
    week_position,
    years_since,
)
from terrepi.regression import ols_fit, stars
from terrepi.rt import attribution_matrix, wallinga_teunis, weekly_average
from terrepi.simulator import MortalityParams, simulate_cases, simulate_mortality

from conftest import make_registry

FIXTURES = Path(__file__).parent / "fixtures"
MOBILITY_COLUMNS = ["internal", "inbound", "outbound", "internal_pca"]


def test_rt_recovery(criterion):
    gi = discretize_gamma(4.0, 2.0, 14)
    L = gi.max_lag
    start = dt.date(2020, 3, 2)
    change = 50
    R = np.r_[np.full(change, 2.5), np.full(200 - change, 0.8)]
    day_weeks = [iso_week(start + dt.timedelta(days=d)) for d in range(200)]
    t0 = time.perf_counter()
    good = total = 0
    for i in range(100):
        cases = simulate_cases(R, gi, 20, np.random.default_rng(i), start, f"R{i}", form="cohort")
        weekly = weekly_average(wallinga_teunis(cases, gi))
        for w, value in zip(weekly.weeks, weekly.values):
            days = [d for d, dw in enumerate(day_weeks) if dw == w]
            clean = (len(days) == 7 and days[0] >= L and days[-1] <= 199 - L
                     and all(abs(d - change) >= L for d in days) and not days[0] < change <= days[-1])
            if clean:
                total += 1
                good += abs(value - R[days[0]]) <= 0.15
    elapsed = time.perf_counter() - t0
    share = good / total
    criterion(1, "Rt recovery on 100 regions x 200 days", share >= 0.95 and elapsed < 10,
              f"{good}/{total} clean weeks within 0.15 ({share:.1%}), {elapsed:.2f} s")


def _daily(values):
    return DailySeries("X", dt.date(2020, 3, 1), values)


def test_renewal_fixed_point(criterion):
    gi = discretize_gamma(4.0, 2.0)
    L = gi.max_lag
    flat = wallinga_teunis(_daily(np.full(120, 50.0)), gi).daily_rt[L:-L]
    rate = 0.08
    grow = wallinga_teunis(_daily(np.exp(rate * np.arange(120))), gi).daily_rt[L:-L]
    lotka = 1.0 / np.sum(gi.pmf * np.exp(-rate * gi.lags))
    rel = np.max(np.abs(grow / lotka - 1))
    ok = np.all((flat >= 0.95) & (flat <= 1.05)) and rel < 0.05
    criterion(2, "renewal fixed points", ok,
              f"constant interior in [{flat.min():.4f}, {flat.max():.4f}], growth max rel err {rel:.1e}")


def test_attribution_conservation(criterion):
    rng = np.random.default_rng(3)
    worst, checked = 0.0, 0
    for _ in range(100):
        gi = discretize_gamma(rng.uniform(2, 7), rng.uniform(1, 4))
        c = rng.poisson(rng.uniform(0.5, 40), int(rng.integers(20, 120))).astype(float)
        P = attribution_matrix(c, gi)
        pad = np.r_[np.zeros(gi.max_lag), c]
        for j in range(len(c)):
            denom = pad[j : j + gi.max_lag] @ gi.pmf[::-1]
            if denom > 0:
                worst = max(worst, abs(P[:, j].sum() - 1))
                checked += 1
    criterion(3, "attribution conservation on 100 fixtures", worst <= 1e-9,
              f"{checked} days, max |sum - 1| = {worst:.1e}")


def _round_trip(seed):
    params = MortalityParams(1000.0, 150.0, -4.0, 30.0, 2011, 2020)
    series, truth = simulate_mortality(params, [(parse_week("2020-W12"), parse_week("2020-W17"), 0.4)], seed, "A")
    ex = excess_for_regions({"A": series})["A"]
    injected = truth["injected_excess"].to_numpy()
    rel = ex.excess[injected > 0].sum() / injected.sum() - 1
    inside = (ex.observed >= ex.lower95) & (ex.observed <= ex.upper95)
    return rel, bool(np.all(ex.excess[inside] == 0)), int(inside.sum())


def test_excess_round_trip(criterion):
    rel, zero_inside, n_inside = _round_trip(2020)
    spread = [_round_trip(s)[0] for s in range(50)]
    within = sum(abs(r) <= 0.10 for r in spread)

    gamma = np.array([3, -1, 4, -1, 5, -9, 2, -6, 5, -3, 5, -4], dtype=float)
    gamma -= gamma.mean()

    def gen(w):
        return 200.0 - 2.5 * years_since(w, 2011) + (cyclic_bspline_basis([week_position(w[1])], 12) @ gamma)[0]

    weeks = week_range((2011, 1), (2019, 52))
    model = fit_baseline(WeeklySeries("N", weeks, np.array([gen(w) for w in weeks])))
    err = max(abs(model.intercept - 200.0), abs(model.trend_slope + 2.5),
              np.max(np.abs(model.seasonal_coeffs - _sum_to_zero(12) @ (_sum_to_zero(12).T @ gamma))))
    ok = abs(rel) <= 0.10 and zero_inside and err <= 1e-6
    criterion(4, "excess mortality round trip", ok,
              f"recovered {rel:+.1%} of injected, {n_inside} in-band weeks all 0, noiseless err {err:.1e}; "
              f"{within}/50 seeds within 10%")


def test_reported_aggregate_fixture(criterion):
    medians = {"urban": (73.0, 26.0), "intermediate": (15.0, 32.0), "rural": (5.0, 38.0)}
    rows, sets = [], {}
    weeks = ((2020, 14), (2020, 46))
    for typ, (first, second) in medians.items():
        for k, offset in enumerate((-4.0, 0.0, 11.0)):
            rid = f"{typ[0].upper()}{k}"
            rows.append((rid, "IT", typ))
            pct = np.array([first + offset, second + offset])
            expected = np.array([100.0, 100.0])
            obs = expected * (1 + pct / 100)
            sets[rid] = ExcessSeries(rid, weeks, obs, expected, expected - 5, expected + 5, obs - expected, pct)
    agg = aggregate_excess(sets, make_registry(rows)).set_index("iso_week")
    first, second = agg.loc["2020-W14"], agg.loc["2020-W46"]
    ok = (first[["urban", "intermediate", "rural"]].tolist() == [73.0, 15.0, 5.0]
          and second[["urban", "intermediate", "rural"]].tolist() == [26.0, 32.0, 38.0]
          and first.urban - first.intermediate == 58.0 and first.urban - first.rural == 68.0)
    criterion(5, "aggregate medians 73/15/5 and 26/32/38", ok,
              f"gaps {first.urban - first.intermediate:.0f} and {first.urban - first.rural:.0f} pp")


def _random_odm(rng):
    n_countries = int(rng.integers(1, 4))
    rows = [(f"C{c}R{r}", f"C{c}", ["urban", "intermediate", "rural"][r % 3], float(rng.integers(1000, 100000)))
            for c in range(n_countries) for r in range(int(rng.integers(2, 6)))]
    ids = [s[0] for s in rows]
    records = []
    for w in range(6, 6 + int(rng.integers(2, 8))):
        for _ in range(int(rng.integers(1, 40))):
            o, d = rng.choice(ids), rng.choice(ids)
            if o[:2] != d[:2]:
                d = o
            records.append(OdmRecord((2020, w), str(o), str(d), float(rng.integers(0, 1000))))
    return make_registry(rows), records


def test_mobility_invariants(criterion):
    rng = np.random.default_rng(6)
    failures = []
    for i in range(1000):
        reg, recs = _random_odm(rng)
        ind = indicators(recs, reg)
        for col in ("normalized", "per_capita_normalized"):
            if not ind[col].between(0, 1).all():
                failures.append((i, f"{col} bounds"))
        for _, g in ind.groupby(["country", "type"]):
            order = np.argsort(g["raw"].to_numpy(), kind="stable")
            if np.any(np.diff(g["normalized"].to_numpy()[order]) < -1e-12):
                failures.append((i, "monotonicity"))
        sums = ind.pivot_table(index=["country", "iso_week"], columns="type", values="raw", aggfunc="sum")
        off = sum(r.movement_count for r in recs if r.origin_region != r.destination_region)
        diag = sum(r.movement_count for r in recs if r.origin_region == r.destination_region)
        if not (np.allclose(sums["inbound"], sums["outbound"]) and sums["outbound"].sum() == off
                and sums["internal"].sum() == diag):
            failures.append((i, "conservation"))
        ref_week = ind["iso_week"].min()
        change, _ = relative_change(ind, parse_week(ref_week))
        if not (change[change.iso_week == ref_week]["pct_change"] == 0).all():
            failures.append((i, "relative change at reference"))

    fig5 = pd.DataFrame({"region_id": ["A", "A", "A"], "type": "internal",
                         "iso_week": ["2020-W09", "2020-W30", "2020-W31"], "raw": [200.0, 946.0, 180.0]})
    change, _ = relative_change(fig5, (2020, 9))
    pct = change.set_index("iso_week")["pct_change"]
    ok = not failures and abs(pct["2020-W30"] - 373.0) < 1e-9 and pct["2020-W09"] == 0.0
    criterion(6, "mobility invariants on 1000 ODM fixtures", ok,
              f"{len(failures)} violations{': ' + str(failures[:3]) if failures else ''}; "
              f"fixture change {pct['2020-W30']:+.0f}%")


def test_ols_oracle(criterion):
    rng = np.random.default_rng(7)
    worst_beta = worst_fe = 0.0
    star_ok = True
    for _ in range(100):
        n, k, g = int(rng.integers(30, 200)), int(rng.integers(1, 6)), int(rng.integers(1, 6))
        df = pd.DataFrame({f"x{i}": rng.normal(size=n) for i in range(k)})
        df["country"] = [f"C{i % g}" for i in range(n)]
        df["rt"] = rng.normal(size=n) + df.sum(axis=1, numeric_only=True) + df["country"].str[1:].astype(int)
        regs = [f"x{i}" for i in range(k)]
        res = ols_fit(df, regs)
        X = np.column_stack([df[regs].to_numpy(), np.ones(n)] +
                            [(df.country == c).to_numpy(float) for c in sorted(df.country.unique())[1:]])
        beta = np.linalg.solve(X.T @ X, X.T @ df.rt.to_numpy())[:k]
        worst_beta = max(worst_beta, np.max(np.abs(res.coef - beta) / np.abs(beta)))
        dm = df[regs + ["rt"]] - df.groupby("country")[regs + ["rt"]].transform("mean")
        within = np.linalg.lstsq(dm[regs].to_numpy(), dm.rt.to_numpy(), rcond=None)[0]
        worst_fe = max(worst_fe, np.max(np.abs(res.coef - within) / np.abs(within)))
        for p, s in zip(res.pvalue, res.stars):
            star_ok &= s == ("***" if p < 0.01 else "**" if p < 0.05 else "*" if p < 0.1 else "")
    edges = [(0.1, ""), (0.0999999, "*"), (0.05, "*"), (0.0499999, "**"), (0.01, "**"), (0.0099999, "***")]
    star_ok &= all(stars(p) == s for p, s in edges)
    ok = worst_beta <= 1e-8 and worst_fe <= 1e-8 and star_ok
    criterion(7, "OLS oracle, FE equivalence, stars", ok,
              f"max rel err {worst_beta:.1e} (normal equations), {worst_fe:.1e} (within)")


# --- full pipeline criteria


@pytest.fixture(scope="module")
def demo_run(tmp_path_factory):
    t0 = time.perf_counter()
    run = run_pipeline(demo_config(), tmp_path_factory.mktemp("demo") / "run")
    return run, time.perf_counter() - t0


def _table(run, n):
    t = pd.read_csv(run / "regress" / f"table{n}.csv")
    return t[t.variable.isin(MOBILITY_COLUMNS)]


@pytest.mark.slow
def test_sign_patterns(criterion, demo_run, tmp_path):
    run, _ = demo_run
    t1, t2 = _table(run, 1), _table(run, 2)
    first_ok = bool(((t1.coef > 0) & (t1.p < 0.01)).all()) and set(t1.variable) == set(MOBILITY_COLUMNS)
    second_ok = bool((t2.coef < 0).all()) and set(t2.variable) == set(MOBILITY_COLUMNS)
    onsets = pd.read_csv(run / "rt" / "onset.csv", dtype={"region_id": str})
    regions = pd.read_csv(run / "data" / "regions.csv", dtype={"region_id": str})
    med = onsets.merge(regions, on="region_id").groupby("typology")["onset_day"].median()
    urban_first = med["urban"] < med["intermediate"] and med["urban"] < med["rural"]

    lag = run_pipeline(FIXTURES / "lag.cfg", tmp_path / "lag")
    peaks = {}
    for wave in ("first", "second"):
        s = pd.read_csv(lag / "regress" / f"shifts_{wave}.csv")
        peaks[wave] = int(s.loc[s.coef.idxmax(), "shift"])
    lag_ok = all(v == -1 for v in peaks.values())
    ok = first_ok and second_ok and urban_first and lag_ok
    criterion(8, "sign patterns and lag peak", ok,
              f"first wave min coef {t1.coef.min():+.3f} max p {t1.p.max():.1e}; second wave max coef "
              f"{t2.coef.max():+.3f}; median onset u/i/r {med['urban']:.0f}/{med['intermediate']:.0f}/"
              f"{med['rural']:.0f}; lag peaks {peaks}")


def _csv_digests(run):
    return {str(p.relative_to(run)): hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(run.rglob("*.csv"))}


@pytest.mark.slow
def test_determinism(criterion, demo_run, tmp_path):
    run, _ = demo_run
    again = run_pipeline(demo_config(), tmp_path / "again")
    a, b = _csv_digests(run), _csv_digests(again)
    differing = sorted(k for k in a if a.get(k) != b.get(k)) + sorted(set(b) - set(a))
    same_manifest = json.loads((run / "manifest.json").read_text())["outputs"] == \
        json.loads((again / "manifest.json").read_text())["outputs"]
    criterion(9, "byte-identical pipeline rerun", not differing and same_manifest,
              f"{len(a)} CSV files compared, {len(differing)} differ")


@pytest.mark.slow
def test_demo_budget(criterion, demo_run):
    run, elapsed = demo_run
    regions = pd.read_csv(run / "data" / "regions.csv")
    weeks = pd.read_csv(run / "mobility" / "mobility.csv")["iso_week"].nunique()
    figs = len(list((run / "figures").glob("fig*.svg")))
    ok = elapsed < 60 and figs == 6
    criterion(10, "demo simulate-to-figures under 60 s", ok,
              f"{elapsed:.1f} s for {regions.country.nunique()} countries x {len(regions)} regions, "
              f"{weeks} mobility weeks, {figs} figures")

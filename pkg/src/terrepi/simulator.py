"""Synthetic multi-region panels with known ground truth.

Cases follow a discrete Poisson renewal process, mortality a seasonal +
trend expectation with injected multiplicative excess, and mobility a
typology-dependent level times a shared lockdown/summer profile.  Weekly Rt
is generated from the normalised internal mobility:

    Rt(r, w) = base(w) + alpha_country + beta(phase) * (m(r, w + lag) - mean_country(m)) + noise

``base`` is a piecewise-linear epidemic schedule and ``beta`` switches sign
at the second-wave start when so configured.

Everything is driven by one master seed; each region draws from its own
sub-stream so outputs are reproducible byte for byte.
"""
from __future__ import annotations

import configparser
import datetime as dt
import hashlib
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import pandas as pd

from .core import (
    EPOCH,
    ComputationError,
    DailySeries,
    InputError,
    Region,
    Registry,
    Typology,
    WeeklySeries,
    iso_week,
    parse_week,
    parse_week_window,
    shift_week,
    week_label,
    week_range,
    week_start,
    write_daily_cases,
    write_regions,
    write_weekly_deaths,
)
from .gentime import GenerationInterval, discretize_gamma
from .mortality import week_position, years_since

log = logging.getLogger(__name__)

MAX_EXPECTED = 1e9

COUNTRY_CODES = ("AT", "BE", "BG", "CZ", "DE", "DK", "EE", "ES", "FI", "FR", "GR", "HR", "HU", "IE", "IT",
                 "LT", "LV", "NL", "PL", "PT", "RO", "SE", "SI", "SK", "LU", "CY", "MT")


# ---------------------------------------------------------------------------
# single-series generators


def simulate_cases(true_rt, gi: GenerationInterval, seed_cases, rng=None, start_date: dt.date = EPOCH,
                   region_id: str = "sim", form: str = "instantaneous", importation: float = 0.0) -> DailySeries:
    """Poisson renewal process.

    ``seed_cases`` is either a count placed on day 0 or a sequence giving the
    fixed case counts of the first ``len(seed_cases)`` days.  After seeding,
    ``form="instantaneous"`` draws ``cases[t] ~ Poisson(R[t] sum_k cases[t-k] w[k])``;
    ``form="cohort"`` lets every case on day ``t`` produce ``Poisson(R[t] w[k])``
    secondary cases ``k`` days later, so ``R[t]`` is the expected offspring
    of day-``t`` cases.
    """
    R = np.asarray(true_rt, dtype=float)
    n = len(R)
    L = gi.max_lag
    if n <= L:
        raise ValueError(f"trajectory length {n} must exceed max_lag {L}")
    if np.any(R < 0):
        raise ValueError("Rt trajectory must be non-negative")
    seed = np.atleast_1d(np.asarray(seed_cases, dtype=float))
    if np.any(seed < 0) or seed.sum() <= 0:
        raise ValueError("seed_cases must be positive")
    if form not in ("instantaneous", "cohort"):
        raise ValueError(f"unknown renewal form {form!r}")
    rng = np.random.default_rng(rng)
    w_rev = gi.pmf[::-1]
    c = np.zeros(n + L)  # L leading zeros of history
    c[L : L + len(seed)] = seed
    weight = np.concatenate((np.zeros(L), R)) if form == "cohort" else None
    for t in range(len(seed), n):
        past = c[t : t + L]
        if form == "cohort":
            lam = float((past * weight[t : t + L]) @ w_rev)
        else:
            lam = float(R[t] * (past @ w_rev))
        lam += importation
        if lam > MAX_EXPECTED:
            raise ComputationError(
                f"{region_id}: expected cases {lam:.3g} on day {t} exceed {MAX_EXPECTED:.0e}; "
                "lower R or shorten the horizon"
            )
        c[t + L] = rng.poisson(lam) if lam > 0 else 0.0
    return DailySeries(region_id, start_date, c[L:])


def expected_cases(true_rt, gi: GenerationInterval, seed_cases, form: str = "instantaneous") -> np.ndarray:
    """Deterministic mean recursion of :func:`simulate_cases`."""
    R = np.asarray(true_rt, dtype=float)
    n, L = len(R), gi.max_lag
    seed = np.atleast_1d(np.asarray(seed_cases, dtype=float))
    m = np.zeros(n)
    m[: len(seed)] = seed
    for t in range(len(seed), n):
        tot = 0.0
        for k in range(1, L + 1):
            if t - k >= 0:
                tot += m[t - k] * gi.pmf[k - 1] * (R[t - k] if form == "cohort" else R[t])
        m[t] = tot
    return m


@dataclass(frozen=True)
class MortalityParams:
    level: float
    amplitude: float = 0.0
    trend: float = 0.0
    noise_sd: float = 0.0
    history_start: int = 2011
    target_year: int = 2020

    def __post_init__(self):
        if not (self.level > 0) or self.amplitude < 0 or self.noise_sd < 0:
            raise ValueError("mortality level must be positive, amplitude and noise non-negative")
        if self.amplitude >= self.level:
            raise ValueError("seasonal amplitude must stay below the level")

    def mean(self, weeks) -> np.ndarray:
        """Generating expectation: level + amplitude*cos(season) + trend*years."""
        pos = np.array([week_position(w[1]) for w in weeks])
        t = np.array([years_since(w, self.history_start) for w in weeks])
        return self.level + self.amplitude * np.cos(2 * np.pi * pos / 52.0) + self.trend * t


def simulate_mortality(params: MortalityParams, excess_windows=(), rng=None, region_id: str = "sim"):
    """Weekly deaths for ``history_start..target_year``.

    ``excess_windows`` holds ``(first_week, last_week, fraction)`` triples;
    target-year weeks inside a window are scaled by ``1 + fraction``.
    Returns ``(series, truth)`` with ``truth`` giving the target-year
    expectation and injected excess per week.
    """
    rng = np.random.default_rng(rng)
    weeks = week_range((params.history_start, 1), (params.target_year, 53 if _has_w53(params.target_year) else 52))
    mean = params.mean(weeks)
    factor = np.ones(len(weeks))
    for lo, hi, frac in excess_windows:
        if lo[0] != params.target_year or hi[0] != params.target_year:
            raise InputError(f"excess window {week_label(lo)}:{week_label(hi)} lies outside {params.target_year}")
        inside = np.array([lo <= w <= hi for w in weeks])
        factor[inside] *= 1.0 + frac
    noise = rng.normal(0.0, params.noise_sd, len(weeks)) if params.noise_sd > 0 else np.zeros(len(weeks))
    values = np.maximum(mean * factor + noise, 0.0)
    target = np.array([w[0] == params.target_year for w in weeks])
    truth = pd.DataFrame(
        {
            "iso_week": [week_label(w) for w, t in zip(weeks, target) if t],
            "expected": mean[target],
            "injected_excess": (mean * (factor - 1.0))[target],
        }
    )
    return WeeklySeries(region_id, tuple(weeks), values), truth


def _has_w53(year: int) -> bool:
    return dt.date(year, 12, 28).isocalendar()[1] == 53


# ---------------------------------------------------------------------------
# scenario configuration

DEFAULT_PROFILE = (
    "2020-01-01:1.0,2020-03-02:1.0,2020-03-23:0.45,2020-04-27:0.5,2020-06-01:0.8,2020-07-20:1.05,"
    "2020-08-24:1.0,2020-09-14:0.95,2020-10-26:0.7,2020-11-16:0.6,2021-01-31:0.65"
)

DEFAULT_BASE = (
    "2020-01-01:1.45,2020-03-09:1.45,2020-03-30:0.8,2020-05-25:0.85,2020-07-06:1.0,2020-08-17:1.02,"
    "2020-09-07:1.12,2020-12-20:1.12,2021-01-10:0.9"
)


def _schedule(text: str):
    pts = []
    for item in text.split(","):
        d, v = item.split(":")
        pts.append((dt.date.fromisoformat(d.strip()), float(v)))
    return sorted(pts)


@dataclass
class ScenarioConfig:
    """Every field maps to a dotted config key (``a__b`` -> ``a.b``)."""

    scenario__seed: int = 2020
    scenario__countries: int = 22
    scenario__regions__urban: int = 12
    scenario__regions__intermediate: int = 18
    scenario__regions__rural: int = 17
    calendar__start: str = "2020-01-01"
    calendar__end: str = "2021-01-31"
    generation_interval__mean_days: float = 3.96
    generation_interval__sd_days: float = 4.75
    generation_interval__max_lag: int = 35
    population__urban: float = 900_000
    population__intermediate: float = 350_000
    population__rural: float = 160_000
    population__sd_log: float = 0.35
    density__urban: float = 900.0
    density__intermediate: float = 180.0
    density__rural: float = 60.0
    density__sd_log: float = 0.3
    mobility__weeks: str = "2020-W06:2020-W50"
    mobility__trips__urban: float = 3.2
    mobility__trips__intermediate: float = 2.4
    mobility__trips__rural: float = 2.0
    mobility__noise_sd: float = 0.15
    mobility__neighbours: int = 4
    mobility__outflow: float = 0.12
    mobility__profile: str = DEFAULT_PROFILE
    rt__base_profile: str = DEFAULT_BASE
    rt__beta_first: float = 0.6
    rt__beta_second: float = -0.3
    rt__lag: int = 0
    rt__country_sd: float = 0.05
    rt__noise_sd: float = 0.05
    rt__second_wave_start: str = "2020-08-31"
    rt__renewal: str = "cohort"
    seed__cases: float = 4.0
    seed__day__urban: float = 40.0
    seed__day__intermediate: float = 50.0
    seed__day__rural: float = 58.0
    seed__day_sd: float = 6.0
    seed__importation: float = 0.1
    mortality__history_start: int = 2011
    mortality__rate: float = 1.9e-4
    mortality__seasonal_amplitude: float = 0.15
    mortality__trend: float = -0.004
    mortality__noise: float = 0.03
    excess__first__weeks: str = "2020-W13:2020-W17"
    excess__first__urban: float = 0.73
    excess__first__intermediate: float = 0.15
    excess__first__rural: float = 0.05
    excess__second__weeks: str = "2020-W44:2020-W50"
    excess__second__urban: float = 0.26
    excess__second__intermediate: float = 0.32
    excess__second__rural: float = 0.38

    @staticmethod
    def key(name: str) -> str:
        return name.replace("__", ".")

    @classmethod
    def keys(cls) -> list[str]:
        return [cls.key(f.name) for f in fields(cls)]

    @classmethod
    def from_mapping(cls, values: dict) -> "ScenarioConfig":
        known = {cls.key(f.name): f for f in fields(cls)}
        kwargs = {}
        for k, v in values.items():
            if k not in known:
                raise InputError(f"unknown scenario key {k!r}")
            f = known[k]
            typ = type(f.default)
            try:
                kwargs[f.name] = typ(float(v)) if typ in (int, float) and isinstance(v, str) else typ(v)
            except ValueError:
                raise InputError(f"bad value for {k}: {v!r}") from None
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def as_mapping(self) -> dict:
        return {self.key(f.name): getattr(self, f.name) for f in fields(self)}

    def digest(self) -> str:
        text = "\n".join(f"{k}={v!r}" for k, v in sorted(self.as_mapping().items()))
        return hashlib.sha256(text.encode()).hexdigest()

    # derived views
    @property
    def start(self) -> dt.date:
        return dt.date.fromisoformat(self.calendar__start)

    @property
    def end(self) -> dt.date:
        return dt.date.fromisoformat(self.calendar__end)

    def counts(self) -> dict[Typology, int]:
        return {
            Typology.URBAN: self.scenario__regions__urban,
            Typology.INTERMEDIATE: self.scenario__regions__intermediate,
            Typology.RURAL: self.scenario__regions__rural,
        }

    def per_typology(self, prefix: str) -> dict[Typology, float]:
        return {t: float(getattr(self, f"{prefix}__{t.value}")) for t in Typology}

    def excess_windows(self):
        out = []
        for name in ("first", "second"):
            text = getattr(self, f"excess__{name}__weeks")
            if not text:
                continue
            lo, hi = parse_week_window(text)
            out.append((lo, hi, self.per_typology(f"excess__{name}")))
        return out

    def gi(self) -> GenerationInterval:
        return discretize_gamma(self.generation_interval__mean_days, self.generation_interval__sd_days,
                                self.generation_interval__max_lag)

    def profile(self):
        return _schedule(self.mobility__profile)

    def base_profile(self):
        return _schedule(self.rt__base_profile)

    def validate(self) -> None:
        if self.scenario__countries < 1 or self.scenario__countries > len(COUNTRY_CODES):
            raise InputError(f"scenario.countries must be in 1..{len(COUNTRY_CODES)}")
        if sum(self.counts().values()) < 1 or min(self.counts().values()) < 0:
            raise InputError("region counts per typology must be >= 0 with at least one region")
        if self.end <= self.start:
            raise InputError("calendar.end must follow calendar.start")
        if self.start < EPOCH:
            raise InputError("calendar.start must not precede 2020-01-01")
        if self.rt__renewal not in ("cohort", "instantaneous"):
            raise InputError("rt.renewal must be 'cohort' or 'instantaneous'")
        target = self.start.year
        for lo, hi, _ in self.excess_windows():
            if lo[0] != target or hi[0] != target:
                raise InputError(f"excess window {week_label(lo)}:{week_label(hi)} lies outside {target}")
        if self.mortality__history_start >= target:
            raise InputError("mortality.history_start must precede the simulated year")
        parse_week_window(self.mobility__weeks)
        try:
            self.profile()
            self.base_profile()
            dt.date.fromisoformat(self.rt__second_wave_start)
        except ValueError as exc:
            raise InputError(f"bad date in scenario config: {exc}") from None


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``[section]`` headers prefix their keys with ``section.``."""
    text = Path(path).read_text(encoding="utf-8")
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__", inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[__root__]\n" + text)
    except configparser.Error as exc:
        raise InputError(f"{path}: {exc}") from None
    out = {}
    for sec in parser.sections():
        for k, v in parser.items(sec):
            out[k if sec == "__root__" else f"{sec}.{k}"] = v.strip()
    return out


def write_config(values: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in values.items():
            fh.write(f"{k} = {v}\n")


# ---------------------------------------------------------------------------
# full panel


@dataclass
class SimulatedDataset:
    registry: Registry
    cases: dict
    deaths: dict
    odm: pd.DataFrame
    truth_rt: pd.DataFrame
    truth_excess: pd.DataFrame
    truth_mobility: pd.DataFrame
    truth_coupling: dict = field(default_factory=dict)

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_regions(self.registry, out / "regions.csv")
        write_daily_cases(self.cases, out / "cases.csv")
        write_weekly_deaths(self.deaths, out / "deaths.csv")
        opts = dict(index=False, float_format="%.10g", lineterminator="\n")
        self.odm.to_csv(out / "odm.csv", **opts)
        self.truth_rt.to_csv(out / "truth_rt.csv", **opts)
        self.truth_excess.to_csv(out / "truth_excess.csv", **opts)
        self.truth_mobility.to_csv(out / "truth_mobility.csv", **opts)
        pd.DataFrame(sorted(self.truth_coupling.items()), columns=["key", "value"]).to_csv(
            out / "truth_coupling.csv", **opts)
        names = ["regions.csv", "cases.csv", "deaths.csv", "odm.csv", "truth_rt.csv", "truth_excess.csv",
                 "truth_mobility.csv", "truth_coupling.csv"]
        return [out / n for n in names]


def _profile_by_week(pts, weeks) -> np.ndarray:
    xs = np.array([(d - EPOCH).days for d, _ in pts], dtype=float)
    ys = np.array([v for _, v in pts])
    mid = np.array([(week_start(w) - EPOCH).days + 3 for w in weeks], dtype=float)
    return np.interp(mid, xs, ys)


def _make_registry(cfg: ScenarioConfig, rng) -> Registry:
    regions = []
    pop_med = cfg.per_typology("population")
    dens_med = cfg.per_typology("density")
    for code in COUNTRY_CODES[: cfg.scenario__countries]:
        i = 0
        for typ, n in cfg.counts().items():
            for _ in range(n):
                i += 1
                pop = float(np.round(pop_med[typ] * np.exp(rng.normal(0, cfg.population__sd_log))))
                dens = dens_med[typ] * np.exp(rng.normal(0, cfg.density__sd_log))
                area = float(np.round(pop / dens, 1))
                regions.append(Region(f"{code}{i:03d}", code, typ, max(pop, 1000.0), max(area, 1.0)))
    return Registry(regions)


def simulate_panel(cfg: ScenarioConfig) -> SimulatedDataset:
    cfg.validate()
    gi = cfg.gi()
    root = np.random.SeedSequence(cfg.scenario__seed)
    glob_seq, region_seq = root.spawn(2)
    grng = np.random.default_rng(glob_seq)
    registry = _make_registry(cfg, grng)
    ids = list(registry)
    streams = {rid: np.random.default_rng(s) for rid, s in zip(ids, region_seq.spawn(len(ids)))}
    alpha = {c: grng.normal(0, cfg.rt__country_sd) for c in registry.countries}

    n_days = (cfg.end - cfg.start).days + 1
    days = [cfg.start + dt.timedelta(days=i) for i in range(n_days)]
    day_week = [iso_week(d) for d in days]
    sim_weeks = week_range(day_week[0], day_week[-1])
    mob_lo, mob_hi = parse_week_window(cfg.mobility__weeks)
    all_weeks = week_range(min(mob_lo, shift_week(sim_weeks[0], -4)), max(mob_hi, shift_week(sim_weeks[-1], 4)))
    profile = _profile_by_week(cfg.profile(), all_weeks)
    trips = cfg.per_typology("mobility__trips")

    # --- mobility: internal counts and gravity-style neighbour flows
    internal = {}
    for rid in ids:
        reg = registry[rid]
        z = streams[rid].normal(0, cfg.mobility__noise_sd, len(all_weeks))
        internal[rid] = np.round(reg.population * trips[reg.typology] * profile * np.exp(z))
    neighbours = {}
    by_country = {c: [r for r in ids if registry[r].country == c] for c in registry.countries}
    for rid in ids:
        peers = [r for r in by_country[registry[rid].country] if r != rid]
        k = min(cfg.mobility__neighbours, len(peers))
        chosen = grng.choice(len(peers), size=k, replace=False) if k else []
        neighbours[rid] = sorted(peers[i] for i in chosen)
    flows = {}
    for a in ids:
        for b in neighbours[a]:
            share = cfg.mobility__outflow / max(len(neighbours[a]), 1)
            flows[(a, b)] = np.round(share * np.sqrt(internal[a] * internal[b]))

    in_window = np.array([mob_lo <= w <= mob_hi for w in all_weeks])
    week_idx = {w: i for i, w in enumerate(all_weeks)}
    odm_rows = []
    win_labels = [week_label(w) for w, m in zip(all_weeks, in_window) if m]
    for a in ids:
        odm_rows.append(pd.DataFrame({"period": win_labels, "origin": a, "destination": a,
                                      "count": internal[a][in_window]}))
        for b in neighbours[a]:
            odm_rows.append(pd.DataFrame({"period": win_labels, "origin": a, "destination": b,
                                          "count": flows[(a, b)][in_window]}))
    odm = pd.concat(odm_rows, ignore_index=True)
    odm["count"] = odm["count"].astype(np.int64)
    odm = odm.sort_values(["period", "origin", "destination"], kind="stable").reset_index(drop=True)

    inbound = {rid: np.zeros(len(all_weeks)) for rid in ids}
    outbound = {rid: np.zeros(len(all_weeks)) for rid in ids}
    for (a, b), f in flows.items():
        outbound[a] += f
        inbound[b] += f
    tm = []
    for rid in ids:
        for name, arr in (("inbound", inbound[rid]), ("internal", internal[rid]), ("outbound", outbound[rid])):
            tm.append(pd.DataFrame({"region_id": rid, "iso_week": win_labels, "type": name, "raw": arr[in_window]}))
    truth_mobility = pd.concat(tm, ignore_index=True)

    # normalised internal mobility per country over the mobility window
    m_norm = {}
    m_centre = {}
    for c, members in by_country.items():
        vals = np.concatenate([internal[r][in_window] for r in members])
        lo, hi = vals.min(), vals.max()
        for r in members:
            m_norm[r] = np.clip((internal[r] - lo) / (hi - lo) if hi > lo else internal[r] * 0.0, 0.0, 1.0)
        m_centre[c] = float(np.mean([m_norm[r][in_window].mean() for r in members]))

    # --- weekly Rt truth and cases
    second = dt.date.fromisoformat(cfg.rt__second_wave_start)
    phase2 = np.array([week_start(w) > second for w in sim_weeks])
    base = _profile_by_week(cfg.base_profile(), sim_weeks)
    beta = np.where(phase2, cfg.rt__beta_second, cfg.rt__beta_first)
    seed_day = cfg.per_typology("seed__day")
    sim_idx = {w: i for i, w in enumerate(sim_weeks)}
    day_to_simweek = np.array([sim_idx[w] for w in day_week])
    cases = {}
    rt_rows = []
    form = cfg.rt__renewal
    for rid in ids:
        reg = registry[rid]
        rng = streams[rid]
        m = np.array([m_norm[rid][week_idx[shift_week(w, cfg.rt__lag)]] for w in sim_weeks])
        eps = rng.normal(0, cfg.rt__noise_sd, len(sim_weeks))
        r_week = np.maximum(base + alpha[reg.country] + beta * (m - m_centre[reg.country]) + eps, 0.0)
        r_day = r_week[day_to_simweek]
        s0 = int(np.clip(round(seed_day[reg.typology] + rng.normal(0, cfg.seed__day_sd)), 0, n_days - gi.max_lag - 2))
        series = simulate_cases(r_day[s0:], gi, cfg.seed__cases, rng, days[s0], rid, form, cfg.seed__importation)
        cases[rid] = DailySeries(rid, cfg.start, np.concatenate((np.zeros(s0), series.values)))
        rt_rows.append(pd.DataFrame({"region_id": rid, "iso_week": [week_label(w) for w in sim_weeks], "rt": r_week}))
    truth_rt = pd.concat(rt_rows, ignore_index=True)

    # --- mortality
    deaths = {}
    ex_rows = []
    target = cfg.start.year
    windows = cfg.excess_windows()
    for rid in ids:
        reg = registry[rid]
        level = reg.population * cfg.mortality__rate
        params = MortalityParams(level, cfg.mortality__seasonal_amplitude * level, cfg.mortality__trend * level,
                                 cfg.mortality__noise * level, cfg.mortality__history_start, target)
        wins = [(lo, hi, fr[reg.typology]) for lo, hi, fr in windows]
        series, truth = simulate_mortality(params, wins, streams[rid], rid)
        deaths[rid] = WeeklySeries(rid, series.weeks, np.round(series.values))
        truth.insert(0, "region_id", rid)
        ex_rows.append(truth)
    truth_excess = pd.concat(ex_rows, ignore_index=True)

    coupling = {
        "beta_first": cfg.rt__beta_first,
        "beta_second": cfg.rt__beta_second,
        "lag": cfg.rt__lag,
        "second_wave_start": cfg.rt__second_wave_start,
        "renewal": form,
        "config_digest": cfg.digest(),
    }
    return SimulatedDataset(registry, cases, deaths, odm, truth_rt, truth_excess, truth_mobility, coupling)

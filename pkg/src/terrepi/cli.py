"""Command line entry point.

Exit status: 0 success, 2 bad input (unreadable or invalid files, bad
flags), 3 computation failure, 1 anything unexpected.  Every command writes a
``manifest.json`` next to its outputs.
"""
from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import os
import shutil
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from . import figures as figs
from . import mobility as mob
from . import mortality, regression, rt
from .core import ComputationError, InputError, load_daily_cases, load_regions, load_weekly_deaths
from .core import parse_week, parse_week_window, week_label
from .gentime import discretize_gamma
from .simulator import ScenarioConfig, read_config, simulate_panel

log = logging.getLogger("terrepi")

EXIT_INPUT = 2
EXIT_COMPUTE = 3
CSV_OPTS = dict(index=False, float_format="%.10g", lineterminator="\n")

# pipeline settings that are not simulator keys
PIPELINE_DEFAULTS = {
    "pipeline.mode": "simulate",
    "pipeline.input": "",
    "onset.threshold": "20",
    "onset.align_days": "120",
    "excess.train_start": "2011",
    "excess.train_end": "2019",
    "excess.target_year": "2020",
    "excess.knots": "12",
    "mobility.window": "2020-W06:2020-W52",
    "mobility.mode": "observation",
    "mobility.relative_to": "2020-W09",
    "panel.first_wave_days": "28",
    "panel.second_wave_after": "2020-08-31",
    "panel.size_transform": "minmax",
    "panel.keep_censored": "false",
    "regress.covariance": "classical",
    "regress.shifts": "-3:3",
    "figures.country": "",
}
DATA_FILES = ("regions.csv", "cases.csv", "deaths.csv", "odm.csv")


class StageError(Exception):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"stage {stage}: {exc}")
        self.stage = stage
        self.cause = exc


class _WarningCounter(logging.Handler):
    def __init__(self):
        super().__init__(logging.WARNING)
        self.count = 0

    def emit(self, record):
        self.count += 1


# ---------------------------------------------------------------------------
# manifest


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH pins the timestamp for fully reproducible manifests
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    now = dt.datetime.fromtimestamp(int(epoch), dt.timezone.utc) if epoch else dt.datetime.now(dt.timezone.utc)
    return now.replace(microsecond=0).isoformat()


def config_hash(settings: dict) -> str:
    text = json.dumps({k: str(v) for k, v in sorted(settings.items())}, sort_keys=True)
    return hashlib.sha256(text.encode()).hexdigest()


def write_manifest(out_dir: Path, command: str, settings: dict, inputs, outputs, extra: dict | None = None) -> Path:
    manifest = {
        "command": command,
        "config_hash": config_hash(settings),
        "settings": {k: str(v) for k, v in sorted(settings.items())},
        "inputs": {str(p): sha256(p) for p in sorted({Path(p) for p in inputs})},
        "outputs": {Path(p).name: sha256(p) for p in sorted(outputs)},
        "version": __version__,
        "timestamp": _timestamp(),
    }
    if extra:
        manifest.update(extra)
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# stages; each returns (outputs, extra manifest fields)


def stage_simulate(cfg: ScenarioConfig, out: Path):
    ds = simulate_panel(cfg)
    return ds.write(out), {"scenario_digest": cfg.digest()}


def stage_rt(cases_path, regions_path, gi, out: Path, weekly=True, align_days=None, threshold=20):
    registry = load_regions(regions_path)
    cases = load_daily_cases(cases_path, registry)
    est = rt.estimate_all(cases, gi)
    written = []
    if weekly:
        frames = []
        for rid, r in est.items():
            cw = rt.censored_weeks(r)
            frames.append(pd.DataFrame({"region_id": rid, "week": [week_label(w) for w in r.weekly_rt.weeks],
                                        "rt": r.weekly_rt.values, "censored": [w in cw for w in r.weekly_rt.weeks]}))
        table = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
            columns=["region_id", "week", "rt", "censored"])
    else:
        frames = [pd.DataFrame({"region_id": rid, "date": pd.date_range(r.start_date, periods=len(r)).strftime("%Y-%m-%d"),
                                "rt": r.daily_rt, "censored": r.censored}) for rid, r in est.items()]
        table = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(
            columns=["region_id", "date", "rt", "censored"])
    table.to_csv(out / "rt.csv", **CSV_OPTS)
    written.append(out / "rt.csv")

    rows = []
    for rid in sorted(cases):
        rec = rt.onset_day(cases[rid], threshold)
        first = rt.first_case_date(cases[rid])
        rows.append({"region_id": rid, "onset_day": rec.onset_day, "onset_date": rec.date, "reached": rec.reached,
                     "first_case_date": first})
    onsets = pd.DataFrame(rows, columns=["region_id", "onset_day", "onset_date", "reached", "first_case_date"])
    onsets["onset_day"] = onsets["onset_day"].astype("Int64")
    onsets.to_csv(out / "onset.csv", **CSV_OPTS)
    written.append(out / "onset.csv")

    if align_days:
        anchors = {rid: rt.first_case_date(cases[rid]) for rid in cases}
        frame, _ = rt.align_by_onset({rid: r.to_series() for rid, r in est.items()}, anchors, align_days)
        long = frame.reset_index().melt(id_vars="region_id", var_name="day_since_first_case", value_name="rt")
        long = long.dropna(subset=["rt"]).sort_values(["region_id", "day_since_first_case"], kind="stable")
        long.to_csv(out / "rt_aligned.csv", **CSV_OPTS)
        written.append(out / "rt_aligned.csv")
    return written, {}


def stage_excess(deaths_path, regions_path, out: Path, train_start=2011, train_end=2019, target_year=2020, knots=12):
    registry = load_regions(regions_path)
    deaths = load_weekly_deaths(deaths_path, registry)
    ex = mortality.excess_for_regions(deaths, train_start, train_end, target_year, knots)
    frames = [ex[r].frame() for r in sorted(ex)]
    cols = ["region_id", "iso_week", "observed", "expected", "lower95", "upper95", "excess", "excess_pct"]
    table = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=cols)
    table.to_csv(out / "excess.csv", **CSV_OPTS)
    mortality.aggregate_excess(ex, registry).to_csv(out / "excess_aggregate.csv", **CSV_OPTS)
    return [out / "excess.csv", out / "excess_aggregate.csv"], {}


def stage_mobility(odm_path, regions_path, out: Path, window, per_capita=True, relative_to=None, mode="observation"):
    registry = load_regions(regions_path)
    odm = mob.load_odm(odm_path)
    ind = mob.indicators(odm, registry, window, mode)
    if not per_capita:
        ind["per_capita"] = np.nan
        ind["per_capita_normalized"] = np.nan
        ind["flags"] = ind["flags"].map(lambda f: ";".join(x for x in f.split(";") if x and not x.startswith("pc_")))
    cols = ["region_id", "iso_week", "type", "raw", "per_capita", "normalized", "per_capita_normalized", "flags"]
    ind[cols].to_csv(out / "mobility.csv", **CSV_OPTS)
    written = [out / "mobility.csv"]
    extra = {"dropped_records": int(ind.attrs.get("dropped_records", 0))}
    if relative_to:
        change, warns = mob.relative_change(ind, parse_week(relative_to))
        change.to_csv(out / "relative_change.csv", **CSV_OPTS)
        written.append(out / "relative_change.csv")
        extra["relative_change_excluded"] = len(warns)
    return written, extra


def read_mobility(path) -> pd.DataFrame:
    table = pd.read_csv(path, dtype={"region_id": str, "flags": str}, keep_default_na=False,
                        na_values={"per_capita": [""], "per_capita_normalized": [""], "normalized": [""]})
    need = {"region_id", "iso_week", "type", "normalized"}
    if not need <= set(table.columns):
        raise InputError(f"{path}: not a mobility table (needs {sorted(need)}); run `terrepi mobility` first")
    return table


def read_onsets(path) -> dict:
    table = pd.read_csv(path, dtype={"region_id": str})
    out = {}
    for row in table.itertuples(index=False):
        reached = str(row.reached).lower() in ("true", "1")
        out[row.region_id] = rt.OnsetRecord(row.region_id, int(row.onset_day) if reached else None, reached)
    return out


def stage_panel(rt_path, mobility_path, regions_path, onsets_path, out: Path, waves=("first",), first_wave_days=28,
                second_wave_after=dt.date(2020, 8, 31), size_transform="minmax", keep_censored=False):
    registry = load_regions(regions_path)
    rt_weekly = pd.read_csv(rt_path, dtype={"region_id": str})
    if "week" not in rt_weekly.columns:
        raise InputError(f"{rt_path}: expected weekly Rt (column 'week'); run `terrepi rt --weekly`")
    mobility = read_mobility(mobility_path)
    mobility["country"] = mobility["region_id"].map(lambda r: registry[r].country if r in registry else None)
    onsets = read_onsets(onsets_path) if onsets_path else None
    written, meta = [], {}
    for wave in waves:
        panel, info = regression.build_panel(rt_weekly, mobility, registry, wave, onsets, first_wave_days,
                                             second_wave_after, None, size_transform, not keep_censored)
        path = out / f"panel_{wave}.csv"
        panel.to_csv(path, **CSV_OPTS)
        written.append(path)
        meta[wave] = info
    return written, {"panel": meta}


def _shifts(text: str) -> range:
    lo, _, hi = text.partition(":")
    try:
        return range(int(lo), int(hi or lo) + 1)
    except ValueError:
        raise InputError(f"bad shift range {text!r}, expected e.g. -3:3") from None


def stage_regress(panel_path, table: int, out: Path, shifts=None, mobility_path=None, covariance="classical"):
    panel = pd.read_csv(panel_path, dtype={"region_id": str, "country": str})
    missing = [c for c in regression.PANEL_COLUMNS if c not in panel.columns]
    if missing:
        raise InputError(f"{panel_path}: missing panel columns {missing}")
    wave = "first" if table == 1 else "second"
    title = f"Rt regressions, {wave} wave"
    res = regression.run_table(panel, title=title, covariance=covariance)
    res.frame().to_csv(out / f"table{table}.csv", **CSV_OPTS)
    (out / f"table{table}.txt").write_text(res.render(), encoding="utf-8")
    written = [out / f"table{table}.csv", out / f"table{table}.txt"]
    extra = {}
    if shifts is not None:
        lookup = None
        if mobility_path:
            m = read_mobility(mobility_path)
            lookup = m[m["type"] == "internal"].set_index(["region_id", "iso_week"])["normalized"]
        frame, warns = regression.lag_shift_regress(panel, lookup, shifts)
        frame.insert(0, "wave", wave)
        frame.to_csv(out / f"shifts_{wave}.csv", **CSV_OPTS)
        written.append(out / f"shifts_{wave}.csv")
        extra["omitted_shifts"] = warns
    return written, extra


def stage_figures(run_dir, out: Path, overrides=None, country=None):
    return figs.make_figures(run_dir, out, overrides, country or None), {}


# ---------------------------------------------------------------------------
# argument handling


def _settings_from(path) -> dict:
    if not path:
        return {}
    try:
        return read_config(path)
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from None


def _scenario(settings: dict, seed=None) -> ScenarioConfig:
    known = set(ScenarioConfig.keys())
    values = {k: v for k, v in settings.items() if k in known}
    if seed is not None:
        values["scenario.seed"] = seed
    return ScenarioConfig.from_mapping(values)


def _gi(args, settings):
    mean = args.gi_mean if args.gi_mean is not None else settings.get("generation_interval.mean_days")
    sd = args.gi_sd if args.gi_sd is not None else settings.get("generation_interval.sd_days")
    lag = args.gi_max_lag if args.gi_max_lag is not None else settings.get("generation_interval.max_lag")
    if mean is None or sd is None:
        raise InputError("generation interval needs --gi-mean and --gi-sd (or generation_interval.* config keys)")
    try:
        return discretize_gamma(float(mean), float(sd), int(float(lag)) if lag not in (None, "") else None)
    except ValueError as exc:
        raise InputError(str(exc)) from None


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args):
    settings = _settings_from(args.config)
    cfg = _scenario(settings, args.seed)
    out = _out(args, "sim")
    written, extra = stage_simulate(cfg, out)
    write_manifest(out, "simulate", cfg.as_mapping(), [args.config] if args.config else [], written, extra)
    return out


def cmd_rt(args):
    settings = _settings_from(args.config)
    gi = _gi(args, settings)
    out = _out(args, "rt")
    written, extra = stage_rt(args.cases, args.regions, gi, out, args.weekly, args.align_onset, args.onset_threshold)
    opts = {"gi.mean": gi.mean_days, "gi.sd": gi.sd_days, "gi.max_lag": gi.max_lag, "weekly": args.weekly,
            "align_onset": args.align_onset, "onset_threshold": args.onset_threshold}
    write_manifest(out, "rt", opts, [args.cases, args.regions], written, extra)
    return out


def cmd_excess(args):
    out = _out(args, "excess")
    written, extra = stage_excess(args.deaths, args.regions, out, args.train_start, args.train_end,
                                  args.target_year, args.knots)
    opts = {"train_start": args.train_start, "train_end": args.train_end, "target_year": args.target_year,
            "knots": args.knots}
    write_manifest(out, "excess", opts, [args.deaths, args.regions], written, extra)
    return out


def cmd_mobility(args):
    out = _out(args, "mobility")
    window = parse_week_window(args.window)
    written, extra = stage_mobility(args.odm, args.regions, out, window, args.per_capita, args.relative_to, args.mode)
    opts = {"window": args.window, "per_capita": args.per_capita, "relative_to": args.relative_to, "mode": args.mode}
    write_manifest(out, "mobility", opts, [args.odm, args.regions], written, extra)
    return out


def cmd_panel(args):
    out = _out(args, "panel")
    after = dt.date.fromisoformat(args.second_wave_after)
    if args.wave == "first" and not args.onsets:
        raise InputError("first-wave panel needs --onsets (onset.csv from `terrepi rt`)")
    written, extra = stage_panel(args.rt, args.mobility, args.regions, args.onsets, out, (args.wave,),
                                 args.first_wave_days, after, args.size_transform, args.keep_censored)
    opts = {"wave": args.wave, "first_wave_days": args.first_wave_days, "second_wave_after": after,
            "size_transform": args.size_transform, "keep_censored": args.keep_censored}
    inputs = [args.rt, args.mobility, args.regions] + ([args.onsets] if args.onsets else [])
    write_manifest(out, "panel", opts, inputs, written, extra)
    return out


def cmd_regress(args):
    out = _out(args, "regress")
    shifts = _shifts(args.shifts) if args.shifts else None
    written, extra = stage_regress(args.panel, args.table, out, shifts, args.mobility, args.covariance)
    opts = {"table": args.table, "shifts": args.shifts, "covariance": args.covariance}
    inputs = [args.panel] + ([args.mobility] if args.mobility else [])
    write_manifest(out, "regress", opts, inputs, written, extra)
    sys.stdout.write((out / f"table{args.table}.txt").read_text(encoding="utf-8"))
    return out


def cmd_figures(args):
    run = Path(args.run)
    out = _out(args, str(run / "figures"))
    overrides = {k: getattr(args, k) for k in ("regions", "onsets", "rt_aligned", "excess", "excess_aggregate",
                                               "mobility", "relative_change", "shifts") if getattr(args, k)}
    written, extra = stage_figures(run, out, overrides, args.country)
    inputs = [p for name in figs.UPSTREAM for p in figs._upstream(run, name, overrides)]
    write_manifest(out, "figures", {"country": args.country or ""}, inputs, written, extra)
    return out


def _bool(text: str) -> bool:
    return str(text).strip().lower() in ("1", "true", "yes", "on")


def pipeline_settings(config_path=None, seed=None) -> dict:
    """Resolved pipeline settings (simulator keys plus stage keys)."""
    raw = _settings_from(config_path)
    known = set(ScenarioConfig.keys()) | set(PIPELINE_DEFAULTS)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise InputError(f"unknown config keys {unknown}")
    settings = dict(PIPELINE_DEFAULTS)
    settings.update({k: str(v) for k, v in ScenarioConfig().as_mapping().items()})
    settings.update(raw)
    if seed is not None:
        settings["scenario.seed"] = str(seed)
    return settings


def run_pipeline(config_path=None, out="run", seed=None, mode=None, input_dir=None) -> Path:
    settings = pipeline_settings(config_path, seed)
    if mode:
        settings["pipeline.mode"] = mode
    if input_dir:
        settings["pipeline.input"] = str(input_dir)
    run = Path(out)
    run.mkdir(parents=True, exist_ok=True)
    counter = _WarningCounter()
    logging.getLogger("terrepi").addHandler(counter)
    warnings = {}
    timings = {}
    try:
        def stage(name, fn, inputs=()):
            d = run / name
            d.mkdir(parents=True, exist_ok=True)
            before = counter.count
            t0 = time.perf_counter()
            try:
                written, extra = fn(d)
            except Exception as exc:
                raise StageError(name, exc) from exc
            timings[name] = round(time.perf_counter() - t0, 3)
            warnings[name] = counter.count - before
            write_manifest(d, f"pipeline:{name}", settings, list(inputs), written, extra)
            return d

        mode = settings["pipeline.mode"]
        if mode == "simulate":
            stage("data", lambda d: stage_simulate(_scenario(settings), d))
        elif mode == "ingest":
            src = Path(settings["pipeline.input"] or ".")

            def ingest(d):
                copied = []
                for name in DATA_FILES:
                    if not (src / name).exists():
                        raise InputError(f"ingest directory {src} lacks {name}")
                    shutil.copyfile(src / name, d / name)
                    copied.append(d / name)
                return copied, {"source": str(src)}

            stage("data", ingest, [src / n for n in DATA_FILES if (src / n).exists()])
        else:
            raise InputError(f"pipeline.mode must be 'simulate' or 'ingest', got {mode!r}")

        data = run / "data"
        regions = data / "regions.csv"
        gi_args = argparse.Namespace(gi_mean=None, gi_sd=None, gi_max_lag=None)
        align = int(settings["onset.align_days"])
        stage("rt", lambda d: stage_rt(data / "cases.csv", regions, _gi(gi_args, settings), d, True, align,
                                       int(settings["onset.threshold"])), [data / "cases.csv", regions])
        stage("excess", lambda d: stage_excess(data / "deaths.csv", regions, d, int(settings["excess.train_start"]),
                                               int(settings["excess.train_end"]), int(settings["excess.target_year"]),
                                               int(settings["excess.knots"])), [data / "deaths.csv", regions])
        stage("mobility", lambda d: stage_mobility(data / "odm.csv", regions, d,
                                                   parse_week_window(settings["mobility.window"]), True,
                                                   settings["mobility.relative_to"] or None,
                                                   settings["mobility.mode"]), [data / "odm.csv", regions])
        after = dt.date.fromisoformat(settings["panel.second_wave_after"])
        stage("panel", lambda d: stage_panel(run / "rt" / "rt.csv", run / "mobility" / "mobility.csv", regions,
                                             run / "rt" / "onset.csv", d, ("first", "second"),
                                             int(settings["panel.first_wave_days"]), after,
                                             settings["panel.size_transform"], _bool(settings["panel.keep_censored"])),
              [run / "rt" / "rt.csv", run / "mobility" / "mobility.csv", run / "rt" / "onset.csv"])

        def regress(d):
            shifts = _shifts(settings["regress.shifts"]) if settings["regress.shifts"] else None
            out1, e1 = stage_regress(run / "panel" / "panel_first.csv", 1, d, shifts,
                                     run / "mobility" / "mobility.csv", settings["regress.covariance"])
            out2, e2 = stage_regress(run / "panel" / "panel_second.csv", 2, d, shifts,
                                     run / "mobility" / "mobility.csv", settings["regress.covariance"])
            return out1 + out2, {"first": e1, "second": e2}

        stage("regress", regress, [run / "panel" / "panel_first.csv", run / "panel" / "panel_second.csv"])
        overrides = {"regions": regions}
        stage("figures", lambda d: stage_figures(run, d, overrides, settings["figures.country"]),
              [p for name in figs.UPSTREAM for p in figs._upstream(run, name, overrides)])
    finally:
        logging.getLogger("terrepi").removeHandler(counter)

    digests = {}
    for sub in sorted(p for p in run.iterdir() if p.is_dir()):
        mf = json.loads((sub / "manifest.json").read_text(encoding="utf-8"))
        digests.update({f"{sub.name}/{k}": v for k, v in mf["outputs"].items()})
    summary = {
        "command": "pipeline",
        "config_hash": config_hash(settings),
        "settings": settings,
        "inputs": {str(config_path): sha256(config_path)} if config_path else {},
        "outputs": digests,
        "warnings": warnings,
        "timings_s": timings,
        "version": __version__,
        "timestamp": _timestamp(),
    }
    (run / "manifest.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    total = sum(warnings.values())
    if total:
        log.info("%d warnings: %s", total, ", ".join(f"{k}={v}" for k, v in warnings.items() if v))
    return run


def cmd_pipeline(args):
    config = args.config
    if config is None and args.demo:
        config = str(demo_config())
    return run_pipeline(config, args.out or "run", args.seed, args.mode, args.input)


def demo_config() -> Path:
    return Path(str(resources.files("terrepi") / "data" / "demo.cfg"))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="master seed (overrides scenario.seed)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory")
    common.add_argument("--config", default=argparse.SUPPRESS, help="flat key = value config file")

    p = argparse.ArgumentParser(prog="terrepi", description=__doc__.split("\n")[0], parents=[common])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="write a synthetic dataset with ground truth")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("rt", parents=[common], help="Wallinga-Teunis Rt per region")
    s.add_argument("--cases", required=True)
    s.add_argument("--regions", required=True)
    s.add_argument("--gi-mean", type=float)
    s.add_argument("--gi-sd", type=float)
    s.add_argument("--gi-max-lag", type=int)
    s.add_argument("--weekly", action="store_true", help="weekly means instead of daily values")
    s.add_argument("--align-onset", type=int, metavar="N", help="also write N days aligned on the first case")
    s.add_argument("--onset-threshold", type=int, default=20)
    s.set_defaults(func=cmd_rt)

    s = sub.add_parser("excess", parents=[common], help="baseline fits and excess mortality")
    s.add_argument("--deaths", required=True)
    s.add_argument("--regions", required=True)
    s.add_argument("--train-start", type=int, default=2011)
    s.add_argument("--train-end", type=int, default=2019)
    s.add_argument("--target-year", type=int, default=2020)
    s.add_argument("--knots", type=int, default=12)
    s.set_defaults(func=cmd_excess)

    s = sub.add_parser("mobility", parents=[common], help="weekly mobility indicators from an ODM")
    s.add_argument("--odm", required=True)
    s.add_argument("--regions", required=True)
    s.add_argument("--window", default="2020-W06:2020-W52", help="normalisation reference window")
    s.add_argument("--per-capita", action="store_true")
    s.add_argument("--relative-to", metavar="WEEK")
    s.add_argument("--mode", choices=["observation", "aggregate"], default="observation")
    s.set_defaults(func=cmd_mobility)

    s = sub.add_parser("panel", parents=[common], help="assemble a regression panel")
    s.add_argument("--rt", required=True, help="weekly rt.csv")
    s.add_argument("--mobility", required=True)
    s.add_argument("--regions", required=True)
    s.add_argument("--onsets", help="onset.csv (first wave)")
    s.add_argument("--wave", choices=["first", "second"], default="first")
    s.add_argument("--first-wave-days", type=int, default=28)
    s.add_argument("--second-wave-after", default="2020-08-31")
    s.add_argument("--size-transform", choices=["minmax", "log", "raw"], default="minmax")
    s.add_argument("--keep-censored", action="store_true")
    s.set_defaults(func=cmd_panel)

    s = sub.add_parser("regress", parents=[common], help="fixed-effects OLS table and lag shifts")
    s.add_argument("--panel", required=True)
    s.add_argument("--table", type=int, choices=[1, 2], required=True)
    s.add_argument("--shifts", metavar="LO:HI", help="shift range, e.g. --shifts=-3:3")
    s.add_argument("--mobility", help="mobility.csv for shifted internal mobility")
    s.add_argument("--covariance", choices=["classical", "hc1"], default="classical")
    s.set_defaults(func=cmd_regress)

    s = sub.add_parser("figures", parents=[common], help="chart CSVs and SVGs from a run directory")
    s.add_argument("--run", required=True)
    for name in ("regions", "onsets", "rt-aligned", "excess", "excess-aggregate", "mobility", "relative-change"):
        s.add_argument(f"--{name}")
    s.add_argument("--shifts", nargs="+")
    s.add_argument("--country")
    s.set_defaults(func=cmd_figures)

    s = sub.add_parser("pipeline", parents=[common], help="simulate or ingest, then every stage")
    s.add_argument("--mode", choices=["simulate", "ingest"])
    s.add_argument("--input", help="directory with regions.csv, cases.csv, deaths.csv, odm.csv")
    s.add_argument("--demo", action="store_true", help="use the bundled demo scenario")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("seed", "out", "config"):
        if not hasattr(args, name):
            setattr(args, name, None)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        out = args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _code(exc.cause)
    except Exception as exc:  # noqa: BLE001
        code = _code(exc)
        if code == 1:
            raise
        print(f"error: {exc}", file=sys.stderr)
        return code
    log.info("outputs in %s", out)
    return 0


def _code(exc: Exception) -> int:
    if isinstance(exc, ComputationError):
        return EXIT_COMPUTE
    if isinstance(exc, (InputError, ValueError, OSError, KeyError, pd.errors.ParserError)):
        return EXIT_INPUT
    return 1


if __name__ == "__main__":
    sys.exit(main())

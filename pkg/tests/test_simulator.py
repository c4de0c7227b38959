import hashlib

import numpy as np
import pandas as pd
import pytest

from terrepi.core import ComputationError, InputError, parse_week, week_range
from terrepi.gentime import discretize_gamma
from terrepi.mobility import weekly_aggregate
from terrepi.simulator import (
    MortalityParams,
    ScenarioConfig,
    expected_cases,
    read_config,
    simulate_cases,
    simulate_mortality,
    simulate_panel,
)

GI = discretize_gamma(4.0, 2.0, 14)

SMALL = {
    "scenario.countries": 2,
    "scenario.regions.urban": 2,
    "scenario.regions.intermediate": 2,
    "scenario.regions.rural": 2,
    "calendar.end": "2020-07-31",
    "mortality.history_start": 2017,
}


def small_cfg(**extra):
    return ScenarioConfig.from_mapping({**SMALL, **extra})


def test_zero_rt_goes_extinct():
    s = simulate_cases(np.zeros(60), GI, 100, np.random.default_rng(1))
    assert s.values[0] == 100
    assert s.values[1:].sum() == 0


def test_unit_rt_mean_within_five_percent():
    R = np.ones(80)
    runs = np.array([simulate_cases(R, GI, 1000, np.random.default_rng(i)).values for i in range(100)])
    mean = runs.mean(axis=0)
    exp = expected_cases(R, GI, 1000)
    assert np.all(np.abs(mean[40:] - exp[40:]) / exp[40:] < 0.05)


@pytest.mark.parametrize("form", ["instantaneous", "cohort"])
def test_piecewise_schedule_matches_mean_recursion(form):
    R = np.r_[np.full(40, 1.8), np.full(40, 0.7)]
    runs = np.array([simulate_cases(R, GI, 200, np.random.default_rng(i), form=form).values for i in range(200)])
    exp = expected_cases(R, GI, 200, form=form)
    rel = np.abs(runs.mean(axis=0) - exp) / exp
    assert np.all(rel[20:70] < 0.05)


def test_expected_cases_hand_recursion():
    gi = GI.from_pmf([0.5, 0.5])
    m = expected_cases([2.0, 2.0, 2.0, 2.0], gi, 1.0)
    assert m.tolist() == [1.0, 1.0, 2.0, 3.0]
    c = expected_cases([1.0, 3.0, 2.0, 2.0], gi, 1.0, form="cohort")
    # day 1: 1*0.5*R0 ; day 2: 1*0.5*R0 + 0.5*0.5*R1
    assert c.tolist() == pytest.approx([1.0, 0.5, 0.5 + 0.75, 0.75 + 1.25 * 0.5 * 2])


def test_overflow_raises():
    with pytest.raises(ComputationError, match="exceed"):
        simulate_cases(np.full(400, 3.0), GI, 10, np.random.default_rng(0))


def test_bad_inputs():
    with pytest.raises(ValueError):
        simulate_cases(np.ones(10), GI, 5)
    with pytest.raises(ValueError):
        simulate_cases(-np.ones(30), GI, 5)
    with pytest.raises(ValueError):
        simulate_cases(np.ones(30), GI, 0)


def test_mortality_zero_noise_is_baseline():
    p = MortalityParams(100.0, 15.0, -0.5, 0.0, 2015, 2020)
    series, truth = simulate_mortality(p)
    np.testing.assert_array_equal(series.values, p.mean(series.weeks))
    assert (truth["injected_excess"] == 0).all()


def test_mortality_excess_window():
    p = MortalityParams(100.0, 0.0, 0.0, 0.0, 2018, 2020)
    series, truth = simulate_mortality(p, [(parse_week("2020-W10"), parse_week("2020-W12"), 0.4)])
    inj = truth.set_index("iso_week")["injected_excess"]
    assert inj["2020-W10"] == pytest.approx(40.0) and inj["2020-W13"] == 0
    assert len(truth) == 53
    with pytest.raises(InputError, match="outside"):
        simulate_mortality(p, [(parse_week("2019-W50"), parse_week("2020-W02"), 0.4)])


def test_seed_changes_draws_not_means():
    p = MortalityParams(100.0, 10.0, 0.0, 5.0, 2018, 2020)
    a, ta = simulate_mortality(p, rng=1)
    b, tb = simulate_mortality(p, rng=2)
    assert not np.array_equal(a.values, b.values)
    pd.testing.assert_frame_equal(ta, tb)
    x = simulate_cases(np.full(50, 1.2), GI, 50, 1)
    y = simulate_cases(np.full(50, 1.2), GI, 50, 2)
    assert not np.array_equal(x.values, y.values)


def _digests(d):
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(d.iterdir())}


def test_panel_is_deterministic(tmp_path):
    cfg = small_cfg()
    simulate_panel(cfg).write(tmp_path / "a")
    simulate_panel(cfg).write(tmp_path / "b")
    assert _digests(tmp_path / "a") == _digests(tmp_path / "b")
    simulate_panel(small_cfg(**{"scenario.seed": 7})).write(tmp_path / "c")
    assert _digests(tmp_path / "a")["cases.csv"] != _digests(tmp_path / "c")["cases.csv"]


def test_panel_contents():
    ds = simulate_panel(small_cfg())
    assert len(ds.registry) == 12
    assert set(ds.registry.countries) == {"AT", "BE"}
    assert set(ds.cases) == set(ds.registry)
    assert ds.truth_coupling["beta_first"] == 0.6
    reached = [s.values.sum() for s in ds.cases.values()]
    assert min(reached) > 0
    # truth_excess covers the target year only
    assert ds.truth_excess["iso_week"].str.startswith("2020").all()


def test_aggregation_reproduces_truth_mobility():
    ds = simulate_panel(small_cfg())
    agg = weekly_aggregate(ds.odm, ds.registry)
    merged = agg.merge(ds.truth_mobility, on=["region_id", "iso_week", "type"], suffixes=("", "_truth"))
    assert len(merged) == len(ds.truth_mobility) == len(agg)
    np.testing.assert_array_equal(merged["raw"].to_numpy(), merged["raw_truth"].to_numpy())


def test_config_mapping_round_trip():
    cfg = small_cfg()
    again = ScenarioConfig.from_mapping(cfg.as_mapping())
    assert again == cfg and again.digest() == cfg.digest()
    assert "mobility.trips.urban" in ScenarioConfig.keys()


@pytest.mark.parametrize("bad,match", [
    ({"excess.first.weeks": "2019-W50:2020-W02"}, "outside"),
    ({"scenario.countries": 0}, "countries"),
    ({"calendar.end": "2019-12-01"}, "calendar"),
    ({"rt.renewal": "other"}, "renewal"),
])
def test_config_errors(bad, match):
    with pytest.raises(InputError, match=match):
        small_cfg(**bad).validate()


def test_unknown_key_rejected():
    with pytest.raises(InputError, match="unknown"):
        ScenarioConfig.from_mapping({"scenario.colour": 3})


def test_read_config_sections(tmp_path):
    p = tmp_path / "s.cfg"
    p.write_text("top = 1\n[scenario]\nseed = 5   # comment\n[mobility]\ntrips.urban = 2.5\n")
    assert read_config(p) == {"top": "1", "scenario.seed": "5", "mobility.trips.urban": "2.5"}
    cfg = ScenarioConfig.from_mapping({k: v for k, v in read_config(p).items() if k != "top"})
    assert cfg.scenario__seed == 5 and cfg.mobility__trips__urban == 2.5

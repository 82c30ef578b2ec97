from decimal import ROUND_FLOOR, ROUND_HALF_UP, Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plugsense.errors import ScenarioError
from plugsense.netmodel import LineParams, make_grid
from plugsense.plugsim import (
    DEFAULT_START_NS,
    NS,
    LoadTimeline,
    PlugProfile,
    ReferenceMeterProfile,
    quantize,
    quantize_array,
    random_load_timeline,
    read_measurements_csv,
    run_scenario,
    sample_plug,
    write_measurements_csv,
)
from plugsense.powerflow import solve


def decimal_quantize(v, step):
    """Reference quantizer in exact decimal arithmetic."""
    step_d = Decimal(repr(step))
    ticks = (Decimal(repr(v)) / step_d + Decimal("0.5")).to_integral_value(rounding=ROUND_FLOOR)
    return float((ticks * step_d).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@pytest.mark.parametrize("v, expected", [(230.0, 229.9), (233.65, 233.5), (229.0, 229.0), (0.14, 0.3)])
def test_quantize_examples(v, expected):
    assert quantize(v, 0.28) == expected


def test_quantize_matches_decimal_reference():
    rng = np.random.default_rng(11)
    for step in (0.28, 0.2, 0.3, 0.25):
        values = rng.uniform(200, 260, 2000)
        ours = quantize_array(values, step)
        ref = [decimal_quantize(float(v), step) for v in values]
        assert np.array_equal(ours, ref)


def test_quantize_rejects_non_positive():
    with pytest.raises(ValueError):
        quantize(0.0, 0.28)


@settings(max_examples=60)
@given(st.lists(st.floats(200.0, 260.0), min_size=2, max_size=80))
def test_quantized_values_are_separated(values):
    levels = np.unique(quantize_array(np.array(values), 0.28))
    assert np.allclose(levels * 10, np.round(levels * 10))
    if len(levels) > 1:
        assert np.diff(levels).min() >= 0.2 - 1e-9


@settings(max_examples=60)
@given(st.floats(200.0, 260.0), st.floats(0.0, 5.0))
def test_quantize_is_monotone(v, dv):
    assert quantize(v + dv, 0.28) >= quantize(v, 0.28)


def test_sample_plug_deterministic():
    p = PlugProfile("p", offset_v=1.0, rng_seed=4)
    a = sample_plug(p, 230.0, 5 * NS)
    assert a == sample_plug(p, 230.0, 5 * NS)
    quiet = sample_plug(PlugProfile("p", noise_sigma_v=0.0, offset_v=1.0), 230.0, 0)
    assert quiet.voltage_v == quantize(231.0, 0.28)


def test_profiles_validate():
    with pytest.raises(ValueError):
        PlugProfile("p", pulse_step_v=0)
    with pytest.raises(ValueError):
        PlugProfile("p", cadence_s=0)
    with pytest.raises(ValueError):
        ReferenceMeterProfile("r", cadence_s=-1)


def test_timeline_from_events_and_csv(tmp_path):
    tl = LoadTimeline.from_events([(0, "741", 100.0), (30, "703", 50.0), (60, "741", 0.0)])
    assert tl.at(0) == {"703": 0.0, "741": 100.0}
    assert tl.at(45) == {"703": 50.0, "741": 100.0}
    assert tl.at(1e9) == {"703": 50.0, "741": 0.0}
    path = tmp_path / "loads.csv"
    tl.write_csv(path)
    back = LoadTimeline.read_csv(path)
    assert np.array_equal(back.times_s, tl.times_s) and np.array_equal(back.watts, tl.watts)


def test_timeline_validation(ieee37):
    with pytest.raises(ValueError):
        LoadTimeline([5.0], ["741"], [[1.0]])
    with pytest.raises(ValueError):
        LoadTimeline([0.0, 0.0], ["741"], [[1.0], [2.0]])
    with pytest.raises(ValueError):
        LoadTimeline.constant({"799": 1.0}).matrix(ieee37)


def test_random_timeline_seeded(ieee37):
    a = random_load_timeline(ieee37, 7200, seed=3)
    b = random_load_timeline(ieee37, 7200, seed=3)
    assert np.array_equal(a.watts, b.watts) and np.array_equal(a.times_s, b.times_s)
    assert (a.watts >= 0).all() and a.times_s[-1] < 7200
    assert not np.array_equal(a.watts, random_load_timeline(ieee37, 7200, seed=4).watts)


def test_cadence_counts(ieee37):
    plug = PlugProfile("p", cadence_s=10)
    ref = ReferenceMeterProfile("r", cadence_s=60)
    out = run_scenario(ieee37, LoadTimeline.constant({}), {"741": plug}, {"741": ref}, 3600)
    assert sum(m.device_id == "p" for m in out) == 360
    assert sum(m.device_id == "r" for m in out) == 60
    ts = [m.timestamp_ns for m in out]
    assert ts == sorted(ts) and ts[0] == DEFAULT_START_NS


def test_step_load_shifts_reference(ieee37):
    tl = LoadTimeline.from_events([(0, "741", 0.0), (600, "741", 5000.0)])
    out = run_scenario(ieee37, tl, {}, {"741": ReferenceMeterProfile("r")}, 1200)
    before = [m.voltage_v for m in out if m.timestamp_ns < DEFAULT_START_NS + 600 * NS]
    after = [m.voltage_v for m in out if m.timestamp_ns >= DEFAULT_START_NS + 600 * NS]
    assert set(before) == {230.0}
    assert after[0] == pytest.approx(solve(ieee37, {"741": 5000.0})["741"], abs=1e-6)


def test_scenario_deterministic_and_csv(ieee37, tmp_path):
    tl = random_load_timeline(ieee37, 1800, seed=1)
    args = (ieee37, tl, {"741": PlugProfile("p", offset_v=2, rng_seed=5)}, {"741": ReferenceMeterProfile("r")}, 1800)
    a = run_scenario(*args)
    assert a == run_scenario(*args)
    write_measurements_csv(a, tmp_path / "m.csv")
    assert read_measurements_csv(tmp_path / "m.csv") == a


def test_infeasible_timeline_reports_time():
    grid = make_grid("s", [("s", "n", 1000.0)], LineParams(0.1, 0.0))
    tl = LoadTimeline.from_events([(0, "n", 100.0), (120, "n", 1e6)])
    with pytest.raises(ScenarioError) as err:
        run_scenario(grid, tl, {}, {"n": ReferenceMeterProfile("r")}, 600)
    assert err.value.timestamp_ns == DEFAULT_START_NS + 120 * NS

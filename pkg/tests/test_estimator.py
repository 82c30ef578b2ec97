import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plugsense.errors import BoundExhaustedError, UnknownBusError
from plugsense.estimator import SINGLE, UNIFORM, FitConfig, fit_load, fit_single_load, fit_uniform_loads, load_shape
from plugsense.powerflow import solve


def test_load_shape(ieee37):
    assert load_shape(ieee37, SINGLE, "741", 5.0) == {"741": 5.0}
    u = load_shape(ieee37, UNIFORM, "741", 5.0)
    assert len(u) == 36 and set(u.values()) == {5.0}
    with pytest.raises(ValueError):
        load_shape(ieee37, "both", "741", 1.0)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from([UNIFORM, SINGLE]), st.sampled_from(["741", "703", "735", "712"]), st.floats(50, 3000))
def test_round_trip(ieee37, mode, node, planted):
    if mode == UNIFORM:
        planted /= 10
    measured = solve(ieee37, load_shape(ieee37, mode, node, planted))[node]
    res = fit_load(ieee37, measured, node, FitConfig(), mode)
    assert res.converged
    assert res.residual_v <= 0.01
    again = solve(ieee37, load_shape(ieee37, mode, node, res.fitted_load_w))[node]
    assert abs(again - measured) <= 0.01


def test_history_is_monotone_bracket(ieee37):
    measured = solve(ieee37, {"741": 2000.0})["741"]
    res = fit_single_load(ieee37, measured, "741")
    loads = [w for w, _ in res.history]
    assert len(loads) == res.outer_iterations
    # each midpoint halves the bracket
    gaps = np.abs(np.diff(loads))
    assert np.all(gaps[1:] <= gaps[:-1] * 0.5 + 1e-9)


def test_measurement_above_slack_clamps(ieee37):
    res = fit_uniform_loads(ieee37, 231.0, "741")
    assert res.fitted_load_w == 0.0
    assert res.above_slack and not res.converged


def test_zero_load_measurement(ieee37):
    res = fit_uniform_loads(ieee37, 230.0, "741")
    assert res.fitted_load_w == 0.0 and res.converged and res.outer_iterations == 0


def test_upper_bound_exhausted(ieee37):
    with pytest.raises(BoundExhaustedError) as err:
        fit_single_load(ieee37, 200.0, "741", FitConfig(load_hi_w=1000.0))
    assert err.value.bound == "upper"


def test_lower_bound_exhausted(ieee37):
    measured = solve(ieee37, {"741": 500.0})["741"]
    with pytest.raises(BoundExhaustedError) as err:
        fit_single_load(ieee37, measured, "741", FitConfig(load_lo_w=2000.0))
    assert err.value.bound == "lower"


def test_infeasible_upper_bound_still_brackets(ieee37):
    measured = solve(ieee37, {"741": 3000.0})["741"]
    res = fit_single_load(ieee37, measured, "741", FitConfig(load_hi_w=5e6))
    assert res.converged and res.residual_v <= 0.01


def test_bad_arguments(ieee37):
    with pytest.raises(UnknownBusError):
        fit_uniform_loads(ieee37, 229.0, "999")
    with pytest.raises(ValueError):
        fit_uniform_loads(ieee37, 229.0, "799")
    with pytest.raises(ValueError):
        fit_uniform_loads(ieee37, float("nan"), "741")
    with pytest.raises(ValueError):
        FitConfig(tol_v=0)
    with pytest.raises(ValueError):
        FitConfig(load_lo_w=10, load_hi_w=5)


def test_record(ieee37):
    rec = fit_single_load(ieee37, 229.0, "741").as_record()
    assert set(rec) >= {"mode", "node", "fitted_load_w", "residual_v", "converged", "above_slack"}
    assert rec["node_voltage_v"] == pytest.approx(229.0, abs=0.01)

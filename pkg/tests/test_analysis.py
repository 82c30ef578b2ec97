import pytest

from plugsense.analysis import (
    PUBLISHED_EQUIVALENTS_W,
    BandSpec,
    check_voltage_band,
    equivalent_single_load,
    equivalent_uniform_load,
    propagate,
)
from plugsense.netmodel import path_impedance
from plugsense.powerflow import VoltageSolution, solve


def _solution(voltages):
    return VoltageSolution(voltages, {k: complex(v) for k, v in voltages.items()}, 1, True, 0.0)


def test_band_single_low_violation():
    v = _solution({"799": 230.0, "a": 230.0, "b": 200.0})
    out = check_voltage_band(v, BandSpec(230.0))
    assert len(out) == 1
    assert out[0].node == "b" and out[0].side == "low"
    assert out[0].pu == pytest.approx(0.8696, abs=5e-5)


def test_band_boundaries_are_compliant():
    assert check_voltage_band(_solution({"a": 207.0, "b": 253.0, "c": 230.0})) == []
    high = check_voltage_band(_solution({"a": 254.0}))
    assert [(x.node, x.side) for x in high] == [("a", "high")]


def test_band_spec_validation():
    with pytest.raises(ValueError):
        BandSpec(230, 1.1, 0.9)
    with pytest.raises(ValueError):
        BandSpec(0)


def test_equivalent_single_ordering_and_drop_law(ieee37):
    s741 = equivalent_single_load(ieee37, "741", 0.41)
    s703 = equivalent_single_load(ieee37, "703", 0.41)
    assert s703 > s741
    for node, s in (("741", s741), ("703", s703)):
        r = path_impedance(ieee37, node).real
        assert s * r == pytest.approx(0.41 * 230, rel=0.1)


def test_zero_error_means_zero_load(ieee37):
    assert equivalent_uniform_load(ieee37, "741", 0.0) == 0.0
    assert equivalent_single_load(ieee37, "741", 0.0) == 0.0
    with pytest.raises(ValueError):
        equivalent_single_load(ieee37, "741", -0.1)


def test_equivalent_loads_reproduce_the_error(ieee37):
    base = solve(ieee37, {})["703"]
    w = equivalent_uniform_load(ieee37, "703", 0.41)
    drop = base - solve(ieee37, {b: w for b in ieee37.load_buses()})["703"]
    assert drop == pytest.approx(0.41, abs=0.01)


def test_propagate_report(ieee37):
    rep = propagate(ieee37, "741", 0.41)
    assert rep.deltas_v["799"] == 0.0
    assert rep.deltas_v["741"] == pytest.approx(0.41, abs=0.01)
    # voltage drop grows along the path to the loaded node
    path = ieee37.path("741")
    drops = [rep.deltas_v[b] for b in path]
    assert drops == sorted(drops)
    text = rep.to_csv()
    assert text.splitlines()[0] == "node,v_err,equivalent_uniform_w,equivalent_single_w"
    assert "bus,delta_v" in text


def test_published_values_are_listed():
    assert PUBLISHED_EQUIVALENTS_W["741"] == {"uniform": 1100.0, "single": 26000.0}
    assert PUBLISHED_EQUIVALENTS_W["703"] == {"uniform": 1200.0, "single": 41000.0}

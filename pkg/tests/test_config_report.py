import filecmp
from pathlib import Path

import pytest

from plugsense.config import (
    default_scenario,
    grid_config_from_dict,
    load_grid_config,
    load_scenario,
    scenario_from_dict,
)
from plugsense.errors import ConfigError, UnknownBusError
from plugsense.netmodel import path_impedance
from plugsense.report import pair_devices, write_report

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_grid_config_defaults_and_overrides():
    assert load_grid_config(None).build().name == "ieee37"
    g = grid_config_from_dict({"spacing_m": 20, "line": {"r_ohm_per_km": 0.4}}).build()
    assert path_impedance(g, "741").real == pytest.approx(12 * 0.02 * 0.4)
    with pytest.raises(ConfigError):
        grid_config_from_dict({"spacing": 20})
    with pytest.raises(ConfigError):
        grid_config_from_dict({"spacing_m": "far"})


def test_example_configs_load():
    assert load_grid_config(CONFIGS / "grid.yaml").build().slack == "799"
    sc = load_scenario(str(CONFIGS / "scenario.yaml"))
    assert [p.device_id for _, p in sc.plugs] == ["plug741", "plug703"]
    assert sc.device_registry()["plug741"].vendor == "nous a1t"
    assert pair_devices(sc) == [("plug741", "ref741"), ("plug703", "ref703")]


def test_scenario_errors(tmp_path):
    with pytest.raises(UnknownBusError):
        scenario_from_dict({"plugs": [{"id": "p", "bus": "1"}]})
    with pytest.raises(ConfigError):
        scenario_from_dict({"plugs": [{"bus": "741"}]})
    with pytest.raises(ConfigError):
        load_scenario(str(tmp_path / "missing.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("a: [1,\n")
    with pytest.raises(ConfigError):
        load_scenario(str(bad))


def test_constant_loads_scenario():
    sc = scenario_from_dict(
        {"duration_s": 600, "plugs": [{"id": "p", "bus": "741", "noise_sigma_v": 0}], "loads": {"constant": {"741": 0}}}
    )
    values = {m.voltage_v for m in sc.run()}
    assert values == {229.9}


def test_default_scenario_registry():
    reg = default_scenario(3600).device_registry()
    assert set(reg) == {"plug741", "ref741"}


def test_report_is_byte_identical(tmp_path):
    sc = default_scenario(duration_s=2 * 86400)
    summary = write_report(sc, tmp_path / "a")
    write_report(default_scenario(duration_s=2 * 86400), tmp_path / "b")
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert "accuracy.csv" in files and "propagation_741.csv" in files
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", files, shallow=False)
    assert mismatch == [] and errors == []
    header = (tmp_path / "a" / "accuracy.csv").read_text().splitlines()[0]
    assert header == "device,last,interp10s,trimmed1min,mean15min"
    eq = (tmp_path / "a" / "equivalent_loads.csv").read_text()
    assert "published_uniform_w" in eq and "26000.0" in eq
    assert summary["devices"]["plug741"]["offset_v"] == pytest.approx(3.65, abs=0.05)

"""YAML configuration for grids and simulation scenarios."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .errors import ConfigError
from .netmodel import GridModel, LineParams, build_ieee37
from .plugsim import (
    DEFAULT_START_NS,
    LoadTimeline,
    PlugProfile,
    ReferenceMeterProfile,
    random_load_timeline,
    run_scenario,
)
from .telemetry.registry import DeviceInfo, DeviceRegistry
from .telemetry.wire import parse_time

THREE_WEEKS_S = 21 * 86400


@dataclass(frozen=True)
class GridConfig:
    spacing_m: float = 40.0
    slack_voltage_v: float = 230.0
    line: LineParams = LineParams()

    def build(self) -> GridModel:
        return build_ieee37(self.spacing_m, self.line, self.slack_voltage_v)


def _read_yaml(path):
    try:
        with open(path) as fh:
            return yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path} is not valid YAML: {exc}") from exc


def grid_config_from_dict(data: dict) -> GridConfig:
    data = dict(data or {})
    line = dict(data.pop("line", {}) or {})
    unknown = set(data) - {"spacing_m", "slack_voltage_v"}
    if unknown:
        raise ConfigError(f"unknown grid config keys: {sorted(unknown)}")
    try:
        return GridConfig(
            spacing_m=float(data.get("spacing_m", 40.0)),
            slack_voltage_v=float(data.get("slack_voltage_v", 230.0)),
            line=LineParams(**{k: float(v) for k, v in line.items()}),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid grid config: {exc}") from exc


def load_grid_config(path: str | Path | None) -> GridConfig:
    if path is None:
        return GridConfig()
    return grid_config_from_dict(_read_yaml(path))


@dataclass
class Scenario:
    grid: GridModel
    plugs: list[tuple[str, PlugProfile]]
    references: list[tuple[str, ReferenceMeterProfile]]
    duration_s: float
    seed: int = 7
    start_ns: int = DEFAULT_START_NS
    timeline: LoadTimeline | None = None
    load_options: dict = field(default_factory=dict)
    registry: DeviceRegistry | None = None
    _generated: LoadTimeline | None = field(default=None, init=False, repr=False)

    def load_timeline(self) -> LoadTimeline:
        """The explicit timeline if one was configured, else seeded random fluctuations."""
        if self.timeline is not None:
            return self.timeline
        if self._generated is None:
            self._generated = random_load_timeline(self.grid, self.duration_s, self.seed, **self.load_options)
        return self._generated

    def device_registry(self) -> DeviceRegistry:
        if self.registry is not None:
            return self.registry
        reg = DeviceRegistry()
        for bus, p in self.plugs:
            reg[p.device_id] = DeviceInfo("L1", f"bus {bus}", "simulated plug", bus)
        for bus, r in self.references:
            reg[r.device_id] = DeviceInfo("L1", f"bus {bus}", "simulated reference meter", bus)
        return reg

    def run(self):
        placements: dict[str, list] = {}
        refs: dict[str, list] = {}
        for bus, p in self.plugs:
            placements.setdefault(bus, []).append(p)
        for bus, r in self.references:
            refs.setdefault(bus, []).append(r)
        return run_scenario(self.grid, self.load_timeline(), placements, refs, self.duration_s, self.start_ns)

    def with_duration(self, duration_s: float) -> Scenario:
        return replace(self, duration_s=float(duration_s))


def default_scenario(duration_s: float = THREE_WEEKS_S, seed: int = 7) -> Scenario:
    """One plug with a 3.65 V bias beside a reference meter at the far end bus 741."""
    grid = build_ieee37()
    plug = PlugProfile("plug741", offset_v=3.65, phase_s=3.0, rng_seed=seed + 1)
    ref = ReferenceMeterProfile("ref741")
    return Scenario(grid, [("741", plug)], [("741", ref)], float(duration_s), seed)


def scenario_from_dict(data: dict, base_dir: Path = Path(".")) -> Scenario:
    data = dict(data or {})
    grid_ref = data.get("grid")
    if isinstance(grid_ref, dict):
        grid = grid_config_from_dict(grid_ref).build()
    elif grid_ref:
        grid = load_grid_config(base_dir / grid_ref).build()
    else:
        grid = GridConfig().build()
    seed = int(data.get("seed", 7))
    start = data.get("start")
    start_ns = DEFAULT_START_NS if start is None else parse_time(str(start))
    try:
        plugs = [
            (str(p.pop("bus")), PlugProfile(device_id=str(p.pop("id")), **p))
            for p in (dict(x) for x in data.get("plugs", []))
        ]
        refs = [
            (str(r.pop("bus")), ReferenceMeterProfile(device_id=str(r.pop("id")), **r))
            for r in (dict(x) for x in data.get("references", []))
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid device placement: {exc}") from exc
    for bus, _ in plugs + refs:
        grid.require(bus)
    loads = data.get("loads") or {}
    timeline, options = None, {}
    if "csv" in loads:
        timeline = LoadTimeline.read_csv(base_dir / loads["csv"])
    elif "constant" in loads:
        timeline = LoadTimeline.constant({str(k): float(v) for k, v in loads["constant"].items()})
    else:
        options = dict(loads.get("random", {}) or {})
    registry = None
    if data.get("registry"):
        registry = DeviceRegistry.load(base_dir / data["registry"])
    return Scenario(
        grid=grid,
        plugs=plugs,
        references=refs,
        duration_s=float(data.get("duration_s", 3600)),
        seed=seed,
        start_ns=start_ns,
        timeline=timeline,
        load_options=options,
        registry=registry,
    )


def load_scenario(name_or_path: str | None) -> Scenario:
    if name_or_path in (None, "default"):
        return default_scenario()
    path = Path(name_or_path)
    return scenario_from_dict(_read_yaml(path), path.parent)

"""Smart-plug and reference-meter emulation on top of the feeder power flow.

A plug's metering IC encodes voltage as a pulse width that the firmware
reads in whole microseconds, then reports with one decimal place. That
two-stage rounding is what produces the 0.2/0.3 V steps and missing values
seen in real plug data. The reference meter reports the true bus voltage.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import InfeasibleLoadError, ScenarioError
from .netmodel import GridModel
from .powerflow import LoadSet, solve_batch

NS = 1_000_000_000
DEFAULT_START_NS = int(datetime(2023, 1, 1, tzinfo=timezone.utc).timestamp()) * NS

# ties nudged upward so float products like 2299.4999999 round as their decimal value would
_TIE_NUDGE = 1e-9


@dataclass(frozen=True)
class PlugProfile:
    device_id: str
    offset_v: float = 0.0
    pulse_step_v: float = 0.28
    noise_sigma_v: float = 0.15
    cadence_s: float = 10.0
    rng_seed: int = 0
    phase_s: float = 0.0  # first tick relative to scenario start

    def __post_init__(self):
        if not self.pulse_step_v > 0:
            raise ValueError(f"pulse_step_v must be > 0, got {self.pulse_step_v}")
        if not self.cadence_s > 0:
            raise ValueError(f"cadence_s must be > 0, got {self.cadence_s}")
        if self.noise_sigma_v < 0:
            raise ValueError("noise_sigma_v must be >= 0")


@dataclass(frozen=True)
class ReferenceMeterProfile:
    device_id: str
    cadence_s: float = 60.0
    noise_sigma_v: float = 0.0
    rng_seed: int = 0
    phase_s: float = 0.0

    def __post_init__(self):
        if not self.cadence_s > 0:
            raise ValueError(f"cadence_s must be > 0, got {self.cadence_s}")


@dataclass(frozen=True, slots=True)
class Measurement:
    device_id: str
    timestamp_ns: int
    voltage_v: float
    power_w: float | None = None
    current_a: float | None = None


def _round_1dp(x):
    return np.floor(np.asarray(x) * 10.0 + 0.5 + _TIE_NUDGE) / 10.0


def quantize_array(v_true: np.ndarray, pulse_step_v: float) -> np.ndarray:
    ticks = np.floor(np.asarray(v_true, dtype=float) / pulse_step_v + 0.5)
    return _round_1dp(ticks * pulse_step_v)


def quantize(v_true: float, pulse_step_v: float) -> float:
    """Reading a plug reports for true voltage ``v_true``.

    The pulse width is rounded to whole microseconds, converted back to
    volts, and rounded half-away-from-zero to one decimal place.
    """
    if not v_true > 0:
        raise ValueError(f"v_true must be > 0, got {v_true}")
    return float(quantize_array(v_true, pulse_step_v))


def sample_plug(profile: PlugProfile, v_true: float, t_ns: int, rng: np.random.Generator | None = None) -> Measurement:
    """One plug reading at ``t_ns``.

    Without an explicit ``rng`` the noise draw is keyed on ``(rng_seed, t_ns)``
    so the same inputs always give the same reading.
    """
    if rng is None:
        rng = np.random.default_rng([profile.rng_seed, int(t_ns)])
    noise = rng.normal(0.0, profile.noise_sigma_v) if profile.noise_sigma_v > 0 else 0.0
    v = quantize(v_true + profile.offset_v + noise, profile.pulse_step_v)
    return Measurement(profile.device_id, int(t_ns), v)


class LoadTimeline:
    """Piecewise-constant loads: row ``k`` of ``watts`` holds from ``times_s[k]``
    until the next breakpoint. Columns follow ``buses``."""

    def __init__(self, times_s: Sequence[float], buses: Sequence[str], watts: np.ndarray):
        self.times_s = np.asarray(times_s, dtype=float)
        self.buses = tuple(buses)
        self.watts = np.asarray(watts, dtype=float).reshape(len(self.times_s), len(self.buses))
        if len(self.times_s) == 0 or self.times_s[0] != 0:
            raise ValueError("timeline must start with a breakpoint at t = 0")
        if np.any(np.diff(self.times_s) <= 0):
            raise ValueError("timeline breakpoints must be strictly increasing")

    def __len__(self):
        return len(self.times_s)

    @classmethod
    def constant(cls, loads: LoadSet) -> LoadTimeline:
        buses = sorted(loads)
        return cls([0.0], buses, [[loads[b] for b in buses]])

    @classmethod
    def from_segments(cls, segments: Sequence[tuple[float, LoadSet]]) -> LoadTimeline:
        buses = sorted({b for _, loads in segments for b in loads})
        rows = [[loads.get(b, 0.0) for b in buses] for _, loads in segments]
        return cls([t for t, _ in segments], buses, np.array(rows, dtype=float).reshape(len(segments), len(buses)))

    @classmethod
    def from_events(cls, events: Sequence[tuple[float, str, float]]) -> LoadTimeline:
        """Build from ``(time_s, bus, watts)`` events; a load holds until its bus changes again."""
        events = sorted(events, key=lambda e: e[0])
        buses = sorted({b for _, b, _ in events})
        col = {b: i for i, b in enumerate(buses)}
        state = np.zeros(len(buses))
        times, rows = [0.0], [state.copy()]
        for t, bus, w in events:
            state[col[bus]] = w
            if t == times[-1]:
                rows[-1] = state.copy()
            else:
                times.append(float(t))
                rows.append(state.copy())
        return cls(times, buses, np.array(rows).reshape(len(times), len(buses)))

    @classmethod
    def read_csv(cls, path: str | Path) -> LoadTimeline:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls.from_events([(float(r["time_s"]), r["bus"], float(r["load_w"])) for r in rows])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time_s", "bus", "load_w"])
            prev = None
            for t, row in zip(self.times_s, self.watts):
                for b, x in zip(self.buses, row):
                    if prev is None or prev[self.buses.index(b)] != x:
                        w.writerow([repr(float(t)), b, repr(float(x))])
                prev = row

    def at(self, t_s: float) -> dict[str, float]:
        k = int(np.searchsorted(self.times_s, t_s, side="right")) - 1
        return {b: float(x) for b, x in zip(self.buses, self.watts[max(k, 0)])}

    def matrix(self, grid: GridModel) -> np.ndarray:
        """Load rows laid out in the solver's bus order."""
        index = grid.branch_arrays.index
        out = np.zeros((len(self), len(index)))
        for j, bus in enumerate(self.buses):
            grid.require(bus)
            if bus == grid.slack:
                raise ValueError(f"timeline puts load on the slack bus {bus!r}")
            out[:, index[bus]] = self.watts[:, j]
        return out


def random_load_timeline(
    grid: GridModel,
    duration_s: float,
    seed: int,
    base_w: float = 400.0,
    daily_swing_w: float = 250.0,
    mean_interval_s: float = 45.0,
    step_sigma_w: float = 120.0,
    appliance_w: float = 3000.0,
    appliance_prob: float = 0.05,
) -> LoadTimeline:
    """Seeded household load fluctuations.

    Every bus follows a shared daily curve plus its own random walk; at each
    breakpoint one bus either drifts a little or, with ``appliance_prob``,
    toggles a large appliance. Breakpoints arrive as a Poisson process.
    """
    rng = np.random.default_rng(seed)
    buses = grid.load_buses()
    n_events = int(duration_s / mean_interval_s * 1.5) + 16
    gaps = rng.exponential(mean_interval_s, n_events)
    times = np.concatenate([[0.0], np.cumsum(gaps)])
    times = times[times < duration_s]
    n = len(times)
    which = rng.integers(0, len(buses), n)
    steps = rng.normal(0.0, step_sigma_w, n)
    toggles = rng.random(n) < appliance_prob
    steps[0] = 0.0
    toggles[0] = False

    walk = np.zeros((n, len(buses)))
    walk[np.arange(n), which] = np.where(toggles, 0.0, steps)
    walk = np.cumsum(walk, axis=0)
    # reflect each walk into [-2 kW, 2 kW]
    walk = 2000.0 - np.abs((walk + 2000.0) % 8000.0 - 4000.0)

    flips = np.zeros((n, len(buses)))
    flips[np.arange(n), which] = toggles
    appliance_on = np.cumsum(flips, axis=0) % 2

    phase = 2 * math.pi * (times / 86400.0)
    daily = base_w + daily_swing_w * np.sin(phase - math.pi / 2)
    watts = np.clip(daily[:, None] + 0.25 * walk + appliance_w * appliance_on, 0.0, None)
    return LoadTimeline(times, buses, watts)


def _ticks_ns(cadence_s: float, phase_s: float, duration_s: float, start_ns: int) -> np.ndarray:
    cadence_ns = round(cadence_s * NS)
    phase_ns = round(phase_s * NS)
    n = max(0, math.ceil((round(duration_s * NS) - phase_ns) / cadence_ns))
    return start_ns + phase_ns + cadence_ns * np.arange(n, dtype=np.int64)


def run_scenario(
    grid: GridModel,
    load_timeline: LoadTimeline,
    placements: Mapping[str, PlugProfile | Sequence[PlugProfile]],
    ref_placement: Mapping[str, ReferenceMeterProfile | Sequence[ReferenceMeterProfile]],
    duration_s: float,
    start_ns: int = DEFAULT_START_NS,
) -> list[Measurement]:
    """Simulate every device over ``[0, duration_s)`` and return readings in time order."""
    devices = []
    for mapping in (placements, ref_placement):
        for bus, profiles in mapping.items():
            grid.require(bus)
            if isinstance(profiles, (PlugProfile, ReferenceMeterProfile)):
                profiles = [profiles]
            devices.extend((bus, p) for p in profiles)

    ticks = [_ticks_ns(p.cadence_s, p.phase_s, duration_s, start_ns) for _, p in devices]
    segs = [np.searchsorted(load_timeline.times_s, (t - start_ns) / NS, side="right") - 1 for t in ticks]
    used = np.unique(np.concatenate(segs)) if segs else np.array([], dtype=int)
    try:
        mags, _ = solve_batch(grid, load_timeline.matrix(grid)[used])
    except InfeasibleLoadError as exc:
        seg = int(used[exc.case])
        t_ns = start_ns + round(load_timeline.times_s[seg] * NS)
        raise ScenarioError(f"infeasible load set from t = {load_timeline.times_s[seg]:g} s: {exc}", t_ns) from exc
    row_of = {int(s): k for k, s in enumerate(used)}
    index = grid.branch_arrays.index

    out: list[Measurement] = []
    for (bus, prof), t, seg in zip(devices, ticks, segs):
        v_true = mags[[row_of[int(s)] for s in seg], index[bus]]
        rng = np.random.default_rng(prof.rng_seed)
        noise = rng.normal(0.0, prof.noise_sigma_v, len(t)) if prof.noise_sigma_v > 0 else 0.0
        if isinstance(prof, PlugProfile):
            values = quantize_array(v_true + prof.offset_v + noise, prof.pulse_step_v)
        else:
            values = v_true + noise
        out.extend(Measurement(prof.device_id, int(ts), float(v)) for ts, v in zip(t, values))
    out.sort(key=lambda m: (m.timestamp_ns, m.device_id))
    return out


def write_measurements_csv(measurements: Sequence[Measurement], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "device", "voltage"])
        for m in measurements:
            w.writerow([m.timestamp_ns, m.device_id, repr(m.voltage_v)])


def read_measurements_csv(path: str | Path) -> list[Measurement]:
    with open(path, newline="") as fh:
        return [Measurement(r["device"], int(r["timestamp"]), float(r["voltage"])) for r in csv.DictReader(fh)]

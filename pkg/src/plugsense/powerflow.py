"""Backward/forward sweep power flow for radial feeders at unity power factor."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import InfeasibleLoadError, UnknownBusError
from .netmodel import GridModel

LoadSet = Mapping[str, float]

DEFAULT_EPS_V = 1e-6
DEFAULT_MAX_ITER = 100
DEFAULT_FLOOR_PU = 0.5


@dataclass(frozen=True)
class VoltageSolution:
    voltages: dict[str, float]
    phasors: dict[str, complex]
    iterations: int
    converged: bool
    total_loss_w: float

    def __getitem__(self, bus: str) -> float:
        return self.voltages[bus]


def load_vector(grid: GridModel, loads: LoadSet) -> np.ndarray:
    arrays = grid.branch_arrays
    p = np.zeros(len(arrays.index))
    for bus, w in loads.items():
        if bus not in arrays.index:
            raise UnknownBusError(bus)
        if bus == grid.slack:
            raise ValueError(f"load set must not put load on the slack bus {bus!r}")
        w = float(w)
        if not math.isfinite(w):
            raise ValueError(f"load at bus {bus!r} is not finite: {w}")
        p[arrays.index[bus]] = w
    return p


def solve(
    grid: GridModel,
    loads: LoadSet,
    eps: float = DEFAULT_EPS_V,
    max_iter: int = DEFAULT_MAX_ITER,
    floor_pu: float = DEFAULT_FLOOR_PU,
) -> VoltageSolution:
    """Solve bus voltage magnitudes for the given active-power loads.

    Each sweep computes load currents ``I = P / conj(V)``, sums them into
    branch currents from the leaves toward the slack, then rebuilds voltages
    from the slack outward as ``V_child = V_parent - Z * I_branch``. Stops
    when no bus voltage moves by ``eps`` volts or more in one sweep.

    Hitting ``max_iter`` is reported through ``converged=False``. Any bus
    falling below ``floor_pu`` times the slack voltage raises
    :class:`InfeasibleLoadError`.
    """
    if not eps > 0:
        raise ValueError(f"eps must be > 0, got {eps}")
    p = load_vector(grid, loads)
    return _sweep(grid, p, eps, max_iter, floor_pu)


def _sweep(grid, p, eps, max_iter, floor_pu):
    arrays = grid.branch_arrays
    d, z = arrays.downstream, arrays.z
    v0 = complex(grid.slack_voltage_v, 0.0)
    floor = floor_pu * grid.slack_voltage_v
    v = np.full(len(p), v0, dtype=complex)
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        i_load = p / np.conj(v)
        i_branch = d @ i_load
        v_new = v0 - d.T @ (z * i_branch)
        v_new[0] = v0
        mags = np.abs(v_new)
        if not np.all(np.isfinite(mags)) or mags.min() < floor:
            k = int(np.nanargmin(np.where(np.isfinite(mags), mags, -np.inf)))
            bus = grid.topology.order[k]
            raise InfeasibleLoadError(
                f"voltage collapse: bus {bus} at {mags[k]:.3f} V is below the "
                f"{floor_pu:g} p.u. floor ({floor:.1f} V); total load {p.sum():.1f} W is infeasible",
                bus=bus,
                voltage=float(mags[k]),
            )
        step = float(np.max(np.abs(v_new - v)))
        v = v_new
        if step < eps:
            converged = True
            break

    i_branch = d @ (p / np.conj(v))
    loss = float(np.sum(z.real * np.abs(i_branch) ** 2))
    order = grid.topology.order
    mags = np.abs(v)
    voltages = {b: float(mags[k]) for k, b in enumerate(order)}
    voltages[order[0]] = float(grid.slack_voltage_v)
    return VoltageSolution(
        voltages=voltages,
        phasors={b: complex(v[k]) for k, b in enumerate(order)},
        iterations=it,
        converged=converged,
        total_loss_w=loss,
    )


def solve_batch(
    grid: GridModel,
    watts: np.ndarray,
    eps: float = DEFAULT_EPS_V,
    max_iter: int = DEFAULT_MAX_ITER,
    floor_pu: float = DEFAULT_FLOOR_PU,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve many load vectors at once.

    ``watts`` has one row per case and one column per bus in
    ``grid.topology.order``. Returns ``(magnitudes, converged)``; a row that
    collapses raises :class:`InfeasibleLoadError` whose ``case`` is the row.
    """
    arrays = grid.branch_arrays
    d, z = arrays.downstream, arrays.z
    p = np.atleast_2d(np.asarray(watts, dtype=float))
    v0 = complex(grid.slack_voltage_v, 0.0)
    floor = floor_pu * grid.slack_voltage_v
    v = np.full(p.shape, v0, dtype=complex)
    active = np.ones(len(p), dtype=bool)
    for _ in range(max_iter):
        if not active.any():
            break
        rows = np.flatnonzero(active)
        i_branch = (p[rows] / np.conj(v[rows])) @ d.T
        v_new = v0 - (i_branch * z) @ d
        v_new[:, 0] = v0
        mags = np.abs(v_new)
        bad = ~np.isfinite(mags).all(axis=1) | (np.nan_to_num(mags, nan=-1.0).min(axis=1) < floor)
        if bad.any():
            r = int(rows[np.flatnonzero(bad)[0]])
            raise InfeasibleLoadError(
                f"voltage collapse in case {r}: total load {p[r].sum():.1f} W is infeasible", case=r
            )
        step = np.abs(v_new - v[rows]).max(axis=1)
        v[rows] = v_new
        active[rows[step < eps]] = False
    mags = np.abs(v)
    mags[:, 0] = grid.slack_voltage_v
    return mags, ~active


def power_balance(grid: GridModel, loads: LoadSet, solution: VoltageSolution) -> float:
    """Absolute active-power mismatch between slack injection and loads plus losses."""
    arrays = grid.branch_arrays
    order = grid.topology.order
    p = load_vector(grid, loads)
    v = np.array([solution.phasors[b] for b in order])
    i_load = p / np.conj(v)
    i_branch = arrays.downstream @ i_load
    v0 = complex(grid.slack_voltage_v, 0.0)
    injection = (v0 * np.conj(i_load.sum())).real
    losses = float(np.sum(arrays.z.real * np.abs(i_branch) ** 2))
    return abs(injection - p.sum() - losses)


def uniform_loads(grid: GridModel, watts: float) -> dict[str, float]:
    return {b: float(watts) for b in grid.load_buses()}

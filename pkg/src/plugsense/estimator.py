"""Fit feeder loads that reproduce a single observed plug voltage.

Two load shapes are supported: the same load at every non-slack bus
(``uniform``) or one load at the plug's own bus (``single``). The bus voltage
falls monotonically as either load grows, so the load is found by bisection
over the configured bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import BoundExhaustedError, InfeasibleLoadError
from .netmodel import GridModel
from .powerflow import DEFAULT_EPS_V, VoltageSolution, solve, uniform_loads

UNIFORM = "uniform"
SINGLE = "single"


@dataclass(frozen=True)
class FitConfig:
    tol_v: float = 0.01
    load_lo_w: float = 0.0
    load_hi_w: float = 50_000.0
    max_outer_iter: int = 60
    solver_eps_v: float = DEFAULT_EPS_V

    def __post_init__(self):
        if not self.tol_v > 0:
            raise ValueError(f"tol_v must be > 0, got {self.tol_v}")
        if not self.load_lo_w <= self.load_hi_w:
            raise ValueError(f"load_lo_w ({self.load_lo_w}) must not exceed load_hi_w ({self.load_hi_w})")
        if self.max_outer_iter < 1:
            raise ValueError("max_outer_iter must be >= 1")


@dataclass(frozen=True)
class EstimationResult:
    mode: str
    node: str
    measured_v: float
    fitted_load_w: float
    solution: VoltageSolution
    outer_iterations: int
    residual_v: float
    converged: bool
    above_slack: bool = False
    # (load_w, V(node)) of every bisection midpoint, in evaluation order
    history: tuple[tuple[float, float], ...] = field(default=(), repr=False)

    def as_record(self) -> dict:
        return {
            "mode": self.mode,
            "node": self.node,
            "measured_v": self.measured_v,
            "fitted_load_w": self.fitted_load_w,
            "node_voltage_v": self.solution.voltages[self.node],
            "residual_v": self.residual_v,
            "outer_iterations": self.outer_iterations,
            "converged": self.converged,
            "above_slack": self.above_slack,
        }


def load_shape(grid: GridModel, mode: str, at: str, watts: float) -> dict[str, float]:
    if mode == UNIFORM:
        return uniform_loads(grid, watts)
    if mode == SINGLE:
        return {at: float(watts)}
    raise ValueError(f"unknown fit mode {mode!r}")


def fit_uniform_loads(grid: GridModel, measured_v: float, at: str, cfg: FitConfig = FitConfig()) -> EstimationResult:
    return fit_load(grid, measured_v, at, cfg, UNIFORM)


def fit_single_load(grid: GridModel, measured_v: float, at: str, cfg: FitConfig = FitConfig()) -> EstimationResult:
    return fit_load(grid, measured_v, at, cfg, SINGLE)


def fit_load(grid: GridModel, measured_v: float, at: str, cfg: FitConfig, mode: str) -> EstimationResult:
    grid.require(at)
    if at == grid.slack:
        raise ValueError(f"cannot fit against the slack bus {at!r}")
    if not math.isfinite(measured_v):
        raise ValueError(f"measured voltage must be finite, got {measured_v}")

    def evaluate(watts):
        sol = solve(grid, load_shape(grid, mode, at, watts), eps=cfg.solver_eps_v)
        return sol, sol.voltages[at]

    def result(watts, sol, iterations, history, converged=True, above_slack=False):
        return EstimationResult(
            mode=mode,
            node=at,
            measured_v=measured_v,
            fitted_load_w=float(watts),
            solution=sol,
            outer_iterations=iterations,
            residual_v=abs(sol.voltages[at] - measured_v),
            converged=converged,
            above_slack=above_slack,
            history=tuple(history),
        )

    lo, hi = cfg.load_lo_w, cfg.load_hi_w
    sol_lo, v_lo = evaluate(lo)
    if abs(v_lo - measured_v) <= cfg.tol_v:
        return result(lo, sol_lo, 0, [])
    if v_lo < measured_v:
        if measured_v > grid.slack_voltage_v and lo <= 0:
            # generation would be needed; clamp instead of fitting a negative load
            return result(lo, sol_lo, 0, [], converged=False, above_slack=True)
        raise BoundExhaustedError(
            f"measured {measured_v:.4f} V at {at} is above {v_lo:.4f} V reached at the "
            f"lower load bound {lo:g} W",
            bound="lower",
        )

    try:
        sol_hi, v_hi = evaluate(hi)
    except InfeasibleLoadError:
        sol_hi, v_hi = None, -math.inf
    if v_hi > measured_v + cfg.tol_v:
        raise BoundExhaustedError(
            f"measured {measured_v:.4f} V at {at} is below {v_hi:.4f} V reached at the "
            f"upper load bound {hi:g} W",
            bound="upper",
        )
    if sol_hi is not None and abs(v_hi - measured_v) <= cfg.tol_v:
        return result(hi, sol_hi, 0, [])

    history = []
    for k in range(1, cfg.max_outer_iter + 1):
        mid = 0.5 * (lo + hi)
        try:
            sol, v = evaluate(mid)
        except InfeasibleLoadError:
            history.append((mid, -math.inf))
            hi = mid
            continue
        history.append((mid, v))
        if abs(v - measured_v) <= cfg.tol_v:
            return result(mid, sol, k, history)
        if v > measured_v:
            lo = mid
        else:
            hi = mid
    raise BoundExhaustedError(
        f"measured {measured_v:.4f} V at {at} is not reachable before voltage collapse "
        f"within [{cfg.load_lo_w:g}, {cfg.load_hi_w:g}] W",
        bound="upper",
    )

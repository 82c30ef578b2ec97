from typing import Literal, Optional

from pydantic import BaseModel, Field


class PublishRequest(BaseModel):
    topic: str
    payload: str


class PublishResponse(BaseModel):
    status: str


class Point(BaseModel):
    series: str
    device: str
    phase: str
    location: str
    vendor: str
    value: float
    timestamp_ns: int


class QueryResponse(BaseModel):
    count: int
    points: list[Point]


class StatsResponse(BaseModel):
    received: int
    accepted: int
    duplicates: int
    rejected: int
    out_of_order: int
    store_errors: int
    unregistered: int
    malformed_rate: float
    rejected_by_kind: dict[str, int]
    last_timestamp_ns: dict[str, int]


class GridSummary(BaseModel):
    name: str
    slack: str
    slack_voltage_v: float
    buses: list[str]
    lines: list[tuple[str, str, float]]
    violations: list[str]


class LoadsRequest(BaseModel):
    loads: dict[str, float] = Field(default_factory=dict)


class SolutionResponse(BaseModel):
    voltages: dict[str, float]
    iterations: int
    converged: bool
    total_loss_w: float


class EstimateRequest(BaseModel):
    mode: Literal["uniform", "single"] = "uniform"
    node: str
    voltage: float
    tol_v: float = 0.01
    load_lo_w: float = 0.0
    load_hi_w: float = 50_000.0


class EstimateResponse(BaseModel):
    mode: str
    node: str
    measured_v: float
    fitted_load_w: float
    node_voltage_v: float
    residual_v: float
    outer_iterations: int
    converged: bool
    above_slack: bool


class PropagateRequest(BaseModel):
    node: str
    v_err: float = Field(0.41, ge=0)


class PropagateResponse(BaseModel):
    node: str
    v_err: float
    equivalent_uniform_w: float
    equivalent_single_w: float
    deltas_v: dict[str, float]


class BandRequest(BaseModel):
    loads: dict[str, float] = Field(default_factory=dict)
    nominal_v: Optional[float] = None
    lo_pu: float = 0.9
    hi_pu: float = 1.1


class BandViolationModel(BaseModel):
    node: str
    pu: float
    side: str


class BandResponse(BaseModel):
    violations: list[BandViolationModel]

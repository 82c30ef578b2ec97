"""HTTP front end over the store, the ingestion service and the grid tools."""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .. import analysis
from ..errors import PlugsenseError, UnknownBusError
from ..estimator import FitConfig, fit_load
from ..netmodel import GridModel, build_ieee37, validate
from ..powerflow import solve
from ..telemetry.registry import DeviceRegistry
from ..telemetry.service import IngestService
from ..telemetry.store import LineStore
from ..telemetry.wire import WireMessage
from . import schemas


def create_app(
    store: Optional[LineStore] = None,
    service: Optional[IngestService] = None,
    grid: Optional[GridModel] = None,
    registry: Optional[DeviceRegistry] = None,
) -> FastAPI:
    if service is not None and store is None:
        store = service.store
    grid = grid or build_ieee37()
    app = FastAPI(title="plugsense", version="0.1.0")

    @app.exception_handler(UnknownBusError)
    async def _unknown_bus(request: Request, exc: UnknownBusError):
        return JSONResponse(status_code=404, content={"error": type(exc).__name__, "detail": str(exc)})

    @app.exception_handler(PlugsenseError)
    async def _domain_error(request: Request, exc: PlugsenseError):
        return JSONResponse(status_code=422, content={"error": type(exc).__name__, "detail": str(exc)})

    def _store() -> LineStore:
        if store is None:
            raise HTTPException(503, "no store attached")
        return store

    @app.get("/health")
    def health():
        return {"status": "ok", "ingesting": service is not None, "points": len(store) if store is not None else 0}

    @app.get("/stats", response_model=schemas.StatsResponse)
    def stats():
        if service is None:
            raise HTTPException(503, "ingestion service not running")
        return service.stats.as_dict()

    @app.post("/publish", response_model=schemas.PublishResponse)
    def publish(req: schemas.PublishRequest):
        if service is None:
            raise HTTPException(503, "ingestion service not running")
        status = service.ingest(WireMessage(req.topic, req.payload.encode("utf-8")))
        return {"status": status.name.lower()}

    @app.get("/query", response_model=schemas.QueryResponse)
    def query(
        device: Optional[str] = None,
        phase: Optional[str] = None,
        location: Optional[str] = None,
        vendor: Optional[str] = None,
        start_ns: Optional[int] = None,
        end_ns: Optional[int] = None,
    ):
        tags = {k: v for k, v in dict(device=device, phase=phase, location=location, vendor=vendor).items() if v is not None}
        try:
            points = _store().query(tags, start_ns, end_ns)
        except ValueError as exc:
            raise HTTPException(400, str(exc)) from exc
        return {
            "count": len(points),
            "points": [
                {"series": p.series, **p.tags, "value": p.value, "timestamp_ns": p.timestamp_ns} for p in points
            ],
        }

    @app.get("/grid", response_model=schemas.GridSummary)
    def grid_summary():
        return {
            "name": grid.name,
            "slack": grid.slack,
            "slack_voltage_v": grid.slack_voltage_v,
            "buses": [b.id for b in grid.buses],
            "lines": [(ln.from_bus, ln.to_bus, ln.length_m) for ln in grid.lines],
            "violations": [str(v) for v in validate(grid)],
        }

    @app.post("/powerflow", response_model=schemas.SolutionResponse)
    def powerflow(req: schemas.LoadsRequest):
        sol = solve(grid, req.loads)
        return {
            "voltages": sol.voltages,
            "iterations": sol.iterations,
            "converged": sol.converged,
            "total_loss_w": sol.total_loss_w,
        }

    @app.post("/estimate", response_model=schemas.EstimateResponse)
    def estimate(req: schemas.EstimateRequest):
        try:
            cfg = FitConfig(tol_v=req.tol_v, load_lo_w=req.load_lo_w, load_hi_w=req.load_hi_w)
        except ValueError as exc:
            raise HTTPException(422, str(exc)) from exc
        return fit_load(grid, req.voltage, req.node, cfg, req.mode).as_record()

    @app.post("/analyze/propagate", response_model=schemas.PropagateResponse)
    def propagate(req: schemas.PropagateRequest):
        rep = analysis.propagate(grid, req.node, req.v_err)
        return {
            "node": rep.node,
            "v_err": rep.v_err,
            "equivalent_uniform_w": rep.equivalent_uniform_w,
            "equivalent_single_w": rep.equivalent_single_w,
            "deltas_v": rep.deltas_v,
        }

    @app.post("/analyze/band", response_model=schemas.BandResponse)
    def band(req: schemas.BandRequest):
        spec = analysis.BandSpec(req.nominal_v or grid.slack_voltage_v, req.lo_pu, req.hi_pu)
        sol = solve(grid, req.loads)
        return {"violations": [vars(v) for v in analysis.check_voltage_band(sol, spec)]}

    app.state.store = store
    app.state.service = service
    app.state.registry = registry
    return app

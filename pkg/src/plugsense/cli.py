"""plugsense command line.

Batch subcommands run in-process. ``serve`` runs the ingestion listener
(and optionally the HTTP API); ``query --url`` talks to that API instead of
opening the store directly.
"""

from __future__ import annotations

import argparse
import asyncio
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__, analysis, calib
from .config import load_grid_config, load_scenario
from .errors import ConfigError, PlugsenseError
from .estimator import SINGLE, UNIFORM, FitConfig, fit_load
from .netmodel import validate
from .plugsim import LoadTimeline, write_measurements_csv
from .powerflow import solve

log = logging.getLogger("plugsense")

STORE_ENV = "PLUGSENSE_STORE"
DEFAULT_STORE = "plugsense-store"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse would print free text and exit 2; route through the JSON error line instead
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _emit_error(kind: str, message: str, **extra) -> None:
    print(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True), file=sys.stderr)


def _default_store() -> str:
    return os.environ.get(STORE_ENV, DEFAULT_STORE)


def _time_arg(text: str | None) -> int | None:
    """Integer nanoseconds or an ISO-8601 time."""
    if text is None:
        return None
    from .telemetry.wire import parse_time

    try:
        return int(text)
    except ValueError:
        return parse_time(text)


def _grid(args):
    return load_grid_config(getattr(args, "grid_config", None)).build()


# -- grid -------------------------------------------------------------------


def cmd_grid(args) -> int:
    grid = _grid(args)
    violations = validate(grid)
    if args.action == "validate":
        for v in violations:
            print(v)
        if violations:
            _emit_error("InvalidGridError", f"{len(violations)} invariant violation(s)")
            return 1
        print(f"ok: {len(grid.buses)} buses, {len(grid.lines)} lines, slack {grid.slack}")
        return 0
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["from_bus", "to_bus", "length_m", "r_ohm", "x_ohm", "max_i_a"])
    for ln in grid.lines:
        z = ln.impedance
        w.writerow([ln.from_bus, ln.to_bus, f"{ln.length_m:g}", f"{z.real:.6f}", f"{z.imag:.6f}", f"{ln.params.max_i_a:g}"])
    return 0


# -- simulate ---------------------------------------------------------------


def cmd_simulate(args) -> int:
    scenario = load_scenario(args.scenario)
    if args.duration is not None:
        scenario = scenario.with_duration(args.duration)
    measurements = scenario.run()
    if args.out:
        write_measurements_csv(measurements, args.out)
        log.info("wrote %d measurements to %s", len(measurements), args.out)
    if args.loads_out:
        scenario.load_timeline().write_csv(args.loads_out)
    if args.publish:
        from .telemetry.service import Publisher, parse_bind
        from .telemetry.wire import encode_sensor_message

        host, port = parse_bind(args.publish)
        counts: dict[str, int] = {}
        with Publisher(host, port) as pub:
            for m in measurements:
                status = pub.publish(encode_sensor_message(m))
                counts[status.name.lower()] = counts.get(status.name.lower(), 0) + 1
        print(json.dumps(counts, sort_keys=True))
    if not args.out and not args.publish:
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["timestamp", "device", "voltage"])
        w.writerows([m.timestamp_ns, m.device_id, repr(m.voltage_v)] for m in measurements)
    return 0


# -- serve / query ----------------------------------------------------------


def cmd_serve(args) -> int:
    from .telemetry.registry import DeviceRegistry
    from .telemetry.service import IngestService, serve_forever
    from .telemetry.store import LineStore

    registry = DeviceRegistry.load(args.registry) if args.registry else DeviceRegistry()
    store = LineStore(args.store or _default_store(), fsync=not args.no_fsync)
    service = IngestService(registry, store)
    app = None
    if args.http:
        from .api.app import create_app

        app = create_app(store=store, service=service, registry=registry)
    try:
        asyncio.run(serve_forever(service, args.bind, args.http, app))
    except KeyboardInterrupt:
        pass
    finally:
        service.shutdown()
        store.close()
        log.info("final stats %s", json.dumps(service.stats.as_dict(), sort_keys=True))
    return 0


def _query_rows(args) -> list[dict]:
    start, end = _time_arg(args.start), _time_arg(args.end)
    if args.url:
        import httpx

        params = {k: v for k, v in {"device": args.device, "start_ns": start, "end_ns": end}.items() if v is not None}
        r = httpx.get(args.url.rstrip("/") + "/query", params=params, timeout=30)
        if r.status_code != 200:
            raise PlugsenseError(f"query failed with HTTP {r.status_code}: {r.text}")
        return r.json()["points"]
    from .telemetry.store import LineStore

    path = Path(args.store or _default_store())
    if not path.is_dir():
        raise ConfigError(f"store directory {path} does not exist")
    with LineStore(path, read_only=True) as store:
        tags = {"device": args.device} if args.device else {}
        return [{"series": p.series, **p.tags, "value": p.value, "timestamp_ns": p.timestamp_ns} for p in store.query(tags, start, end)]


def cmd_query(args) -> int:
    rows = _query_rows(args)
    if args.format == "json":
        json.dump(rows, sys.stdout, indent=None)
        sys.stdout.write("\n")
        return 0
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["timestamp", "volts", "device", "phase", "location", "vendor"])
    for r in rows:
        w.writerow([r["timestamp_ns"], repr(float(r["value"])), r["device"], r["phase"], r["location"], r["vendor"]])
    return 0


# -- calibrate --------------------------------------------------------------


def _series(src: str, store_dir: str | None) -> calib.Series:
    """``file.csv`` (timestamp,volts), ``file.csv#device`` (simulate output) or ``store:device``."""
    if src.startswith("store:"):
        from .telemetry.store import LineStore

        device = src[len("store:"):]
        with LineStore(store_dir or _default_store(), read_only=True) as store:
            points = store.query({"device": device})
        return calib.Series.from_pairs(((p.timestamp_ns, p.value) for p in points), device)
    path, _, device = src.partition("#")
    if not Path(path).is_file():
        raise ConfigError(f"series file {path} does not exist")
    if device:
        from .plugsim import read_measurements_csv

        return calib.Series.from_measurements(read_measurements_csv(path), device)
    return calib.Series.read_csv(path, Path(path).stem)


def cmd_calibrate(args) -> int:
    plug = _series(args.plug, args.store)
    ref = _series(args.ref, args.store)
    if len(plug) == 0 or len(ref) == 0:
        raise calib.NoDataError("plug or reference series is empty")
    methods = calib.METHODS if args.method == "all" else (args.method,)
    offset = calib.estimate_offset(calib.paired_differences(plug, ref, calib.INTERP_10S)) if args.offset is None else args.offset
    aligned = calib.apply_offset(plug, offset)

    out = Path(args.report)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"offset_v": round(offset, 6), "methods": {}}
    for method in methods:
        diffs = calib.paired_differences(aligned, ref, method)
        calib.write_diffs_csv(diffs, out / f"diffs_{method}.csv")
        hist = calib.histogram([d.diff_v for d in diffs], 0.1)
        with open(out / f"histogram_{method}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bin_v", "count"])
            w.writerows([f"{k:.1f}", c] for k, c in hist.items())
        if not diffs:
            raise calib.NoDataError(f"no usable reference ticks for method {method}")
        try:
            nr = calib.anderson_darling_normality([d.diff_v for d in diffs])
            a2_star, rejected = round(nr.a2_star, 6), nr.reject_at_5pct
        except calib.CalibrationError as exc:
            # too few or constant diffs: the test is undefined, not failed
            log.warning("normality test skipped for %s: %s", method, exc)
            a2_star, rejected = None, None
        summary["methods"][method] = {
            "n": len(diffs),
            "p95_v": round(calib.accuracy_p95(diffs), 6),
            "variance_v2": round(calib.diff_variance(diffs), 8),
            "ad_a2_star": a2_star,
            "normal_rejected": rejected,
        }
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "offset_v", "n", "p95_v", "variance_v2", "ad_a2_star", "normal_rejected"])
        for m, s in summary["methods"].items():
            a2 = "" if s["ad_a2_star"] is None else f"{s['ad_a2_star']:.6f}"
            rej = "" if s["normal_rejected"] is None else str(s["normal_rejected"]).lower()
            w.writerow([m, f"{offset:.6f}", s["n"], f"{s['p95_v']:.6f}", f"{s['variance_v2']:.8f}", a2, rej])
    print(json.dumps(summary, sort_keys=True))
    return 0


# -- estimate / analyze -----------------------------------------------------


def cmd_estimate(args) -> int:
    grid = _grid(args)
    cfg = FitConfig(tol_v=args.tol, load_lo_w=args.lo, load_hi_w=args.hi)
    rec = fit_load(grid, args.voltage, args.node, cfg, args.mode).as_record()
    if args.format == "json":
        print(json.dumps(rec, sort_keys=True))
    else:
        w = csv.DictWriter(sys.stdout, fieldnames=list(rec), lineterminator="\n")
        w.writeheader()
        w.writerow(rec)
    return 0


def _read_loads(path: str) -> dict[str, float]:
    """``bus,load_w`` rows; a ``time_s`` column is accepted and the last state wins."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and "time_s" in rows[0]:
        tl = LoadTimeline.read_csv(path)
        return tl.at(float(tl.times_s[-1]))
    try:
        return {r["bus"]: float(r["load_w"]) for r in rows}
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: expected columns bus,load_w ({exc})") from exc


def cmd_analyze(args) -> int:
    grid = _grid(args)
    if args.action == "propagate":
        rep = analysis.propagate(grid, args.node, args.verr)
        text = rep.to_csv()
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
        pub = analysis.PUBLISHED_EQUIVALENTS_W.get(args.node)
        summary = {"node": args.node, "v_err": args.verr, "uniform_w": rep.equivalent_uniform_w, "single_w": rep.equivalent_single_w}
        if pub:
            summary["published_uniform_w"] = pub["uniform"]
            summary["published_single_w"] = pub["single"]
        print(json.dumps(summary, sort_keys=True), file=sys.stderr if not args.out else sys.stdout)
        return 0
    loads = _read_loads(args.loads)
    sol = solve(grid, loads)
    violations = analysis.check_voltage_band(sol, analysis.BandSpec(args.nominal or grid.slack_voltage_v))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["node", "pu", "side"])
    for v in violations:
        w.writerow([v.node, f"{v.pu:.4f}", v.side])
    return 0


# -- report -----------------------------------------------------------------


def cmd_report(args) -> int:
    from .report import write_report

    scenario = load_scenario(args.scenario)
    if args.duration is not None:
        scenario = scenario.with_duration(args.duration)
    summary = write_report(scenario, args.out, v_err=args.verr)
    print(json.dumps(summary, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="plugsense", description="Smart-plug voltage sensing on a low-voltage feeder.")
    p.add_argument("--version", action="version", version=f"plugsense {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("grid", help="show or validate the feeder model")
    g.add_argument("action", choices=["show", "validate"])
    g.add_argument("--config", dest="grid_config")
    g.set_defaults(func=cmd_grid)

    s = sub.add_parser("simulate", help="generate plug and reference measurements")
    s.add_argument("--scenario", default="default")
    s.add_argument("--duration", type=float)
    s.add_argument("--out")
    s.add_argument("--loads-out")
    s.add_argument("--publish", metavar="HOST:PORT", help="send every measurement to a running ingestion service")
    s.set_defaults(func=cmd_simulate)

    sv = sub.add_parser("serve", help="run the ingestion service")
    sv.add_argument("--bind", default="127.0.0.1:1884")
    sv.add_argument("--registry")
    sv.add_argument("--store", help=f"store directory (default ${STORE_ENV} or ./{DEFAULT_STORE})")
    sv.add_argument("--http", metavar="HOST:PORT", help="also serve the HTTP API")
    sv.add_argument("--no-fsync", action="store_true")
    sv.set_defaults(func=cmd_serve)

    q = sub.add_parser("query", help="read stored voltage points")
    q.add_argument("--device")
    q.add_argument("--from", dest="start", help="inclusive start, ns or ISO-8601")
    q.add_argument("--to", dest="end", help="exclusive end, ns or ISO-8601")
    q.add_argument("--format", choices=["csv", "json"], default="csv")
    src = q.add_mutually_exclusive_group()
    src.add_argument("--store")
    src.add_argument("--url", help="base URL of a running HTTP API")
    q.set_defaults(func=cmd_query)

    c = sub.add_parser("calibrate", help="compare a plug series against a reference")
    c.add_argument("--plug", required=True, help="csv, csv#device or store:device")
    c.add_argument("--ref", required=True, help="csv, csv#device or store:device")
    c.add_argument("--method", choices=list(calib.METHODS) + ["all"], default="all")
    c.add_argument("--offset", type=float, help="use this offset instead of estimating it")
    c.add_argument("--store")
    c.add_argument("--report", required=True)
    c.set_defaults(func=cmd_calibrate)

    e = sub.add_parser("estimate", help="fit the load that explains a measured voltage")
    e.add_argument("--mode", choices=[UNIFORM, SINGLE], default=UNIFORM)
    e.add_argument("--node", required=True)
    e.add_argument("--voltage", type=float, required=True)
    e.add_argument("--tol", type=float, default=0.01)
    e.add_argument("--lo", type=float, default=0.0)
    e.add_argument("--hi", type=float, default=50_000.0)
    e.add_argument("--format", choices=["json", "csv"], default="json")
    e.add_argument("--grid-config")
    e.set_defaults(func=cmd_estimate)

    a = sub.add_parser("analyze", help="error propagation and voltage-band checks")
    asub = a.add_subparsers(dest="action", required=True, parser_class=_Parser)
    ap = asub.add_parser("propagate")
    ap.add_argument("--node", required=True)
    ap.add_argument("--verr", type=float, default=0.41)
    ap.add_argument("--out")
    ap.add_argument("--grid-config")
    ab = asub.add_parser("band")
    ab.add_argument("--loads", required=True, help="csv with bus,load_w")
    ab.add_argument("--nominal", type=float)
    ab.add_argument("--grid-config")
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("report", help="full accuracy, calibration and propagation report")
    r.add_argument("--scenario", default="default")
    r.add_argument("--out", required=True)
    r.add_argument("--duration", type=float)
    r.add_argument("--verr", type=float, default=0.41)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        _emit_error("UsageError", str(exc))
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except PlugsenseError as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 1
    except (OSError, ValueError) as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())

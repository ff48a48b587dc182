"""Trip ingestion and splitting, synthetic instance generation, report
serialization, and the command-line front end.

Trips CSV: ``request_time,pickup_lon,pickup_lat,dropoff_lon,dropoff_lat,passengers``
with timestamps as ISO-8601 or integer seconds. Without a projection the
coordinate columns are taken as planar meters (which is what the synthetic
generator emits); with one, lon/lat are mapped through a local
equirectangular projection before snapping to the stop grid.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import asdict, dataclass
from datetime import datetime
from typing import Optional, Sequence

import numpy as np

from .model import (
    DeviationPolicy,
    Grid,
    PenaltyParams,
    Request,
    TravelTimeMatrix,
    build_grid,
    save_matrix,
    save_stops,
)
from .oracle import OracleSizeError, oracle_static_optimum
from .realtime import EpochConfig, SimulationReport, run

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DEADLINE = 3

WAIT_BIN_S = 30
DEVIATION_BIN_S = 15
ASSIGNMENT_BIN_S = 30

TRIP_HEADER = ["request_time", "pickup_lon", "pickup_lat", "dropoff_lon", "dropoff_lat", "passengers"]


class InputError(Exception):
    """Bad user input: malformed files, inconsistent dimensions, bad flags."""


@dataclass(frozen=True)
class TripRecord:
    request_time: int  # seconds from the earliest request
    pickup_x: float
    pickup_y: float
    dropoff_x: float
    dropoff_y: float
    passengers: int


@dataclass(frozen=True)
class Projection:
    """Local equirectangular projection for lon/lat trip coordinates."""

    lon0: float
    lat0: float

    def to_meters(self, lon: float, lat: float) -> tuple[float, float]:
        k = 111_320.0  # meters per degree of latitude
        return ((lon - self.lon0) * k * math.cos(math.radians(self.lat0)), (lat - self.lat0) * k)


def _parse_time(raw: str) -> float:
    raw = raw.strip()
    try:
        return float(raw)
    except ValueError:
        pass
    return datetime.fromisoformat(raw.replace("Z", "+00:00")).timestamp()


def parse_trips(path) -> list[TripRecord]:
    """Read a trips CSV, skipping malformed rows; more than 1% malformed is
    treated as a broken file rather than noise."""
    raw_rows: list[tuple[float, float, float, float, float, int]] = []
    skipped = 0
    total = 0
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or [h.strip() for h in reader.fieldnames] != TRIP_HEADER:
            raise InputError(f"{path}: expected header {','.join(TRIP_HEADER)}")
        for row in reader:
            total += 1
            try:
                t = _parse_time(row["request_time"])
                px, py = float(row["pickup_lon"]), float(row["pickup_lat"])
                dx, dy = float(row["dropoff_lon"]), float(row["dropoff_lat"])
                qty = int(row["passengers"])
                if qty < 1:
                    raise ValueError("passengers < 1")
            except (ValueError, TypeError, KeyError):
                skipped += 1
                continue
            raw_rows.append((t, px, py, dx, dy, qty))
    if total == 0:
        raise InputError(f"{path}: no trip rows")
    if skipped > 0.01 * total:
        raise InputError(f"{path}: {skipped}/{total} malformed rows, aborting")
    if skipped:
        print(f"warning: skipped {skipped} malformed trip rows", file=sys.stderr)
    t0 = min(r[0] for r in raw_rows)
    trips = [
        TripRecord(int(round(t - t0)), px, py, dx, dy, q) for (t, px, py, dx, dy, q) in raw_rows
    ]
    trips.sort(key=lambda r: r.request_time)
    return trips


def ingest(
    trips: Sequence[TripRecord],
    grid: Grid,
    matrix: TravelTimeMatrix,
    capacity: int,
    service: int = 0,
    projection: Optional[Projection] = None,
) -> list[Request]:
    """Snap trips to virtual stops and split parties larger than a vehicle
    into capacity-sized chunks sharing the same stops and release time."""
    out: list[Request] = []
    rid = 0
    for trip in trips:
        px, py = trip.pickup_x, trip.pickup_y
        dx, dy = trip.dropoff_x, trip.dropoff_y
        if projection is not None:
            px, py = projection.to_meters(px, py)
            dx, dy = projection.to_meters(dx, dy)
        origin = grid.snap(px, py).id
        dest = grid.snap(dx, dy).id
        t_short = matrix.travel(origin, dest)
        remaining = trip.passengers
        while remaining > 0:
            take = min(capacity, remaining)
            out.append(Request(rid, trip.request_time, origin, dest, take, t_short, service))
            rid += 1
            remaining -= take
    return out


def save_requests(requests: Sequence[Request], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "e", "origin", "dest", "q", "t_short", "service"])
        for r in requests:
            w.writerow([r.id, r.e, r.origin, r.dest, r.q, r.t_short, r.service])


def load_requests(path) -> list[Request]:
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            out.append(
                Request(
                    int(row["id"]), int(row["e"]), int(row["origin"]), int(row["dest"]),
                    int(row["q"]), int(row["t_short"]), int(row["service"]),
                )
            )
    return out


# ---------------------------------------------------------------------------
# Synthetic instances


PARTY_SIZES = np.array([1, 2, 3, 4, 5, 6])
PARTY_WEIGHTS = np.array([0.45, 0.30, 0.10, 0.08, 0.05, 0.02])


def manhattan_matrix(rows: int, cols: int, cell_m: float, speed_mps: float) -> TravelTimeMatrix:
    """Grid travel times: seconds per cell step times the city-block cell
    distance. Integer per-step times keep the triangle inequality exact."""
    step_s = max(1, round(cell_m / speed_mps))
    r = np.arange(rows * cols) // cols
    c = np.arange(rows * cols) % cols
    dist = np.abs(r[:, None] - r[None, :]) + np.abs(c[:, None] - c[None, :])
    return TravelTimeMatrix(step_s * dist, validate=False)


@dataclass
class SynthInstance:
    grid: Grid
    matrix: TravelTimeMatrix
    trips: list[TripRecord]


def synth(
    grid_rows: int,
    grid_cols: int,
    cell_m: float,
    seed: int,
    n_requests: Optional[int] = None,
    rate_per_hour: Optional[float] = None,
    horizon_s: int = 3600,
    speed_mps: float = 5.0,
) -> SynthInstance:
    """Deterministic synthetic demand over a city-block grid.

    Request times are uniform order statistics over the horizon (a Poisson
    stream conditioned on its count); pass either the count directly or a
    rate to draw the count from.
    """
    if (n_requests is None) == (rate_per_hour is None):
        raise InputError("synth needs exactly one of n_requests or rate_per_hour")
    rng = np.random.default_rng(seed)
    if n_requests is None:
        n_requests = int(rng.poisson(rate_per_hour * horizon_s / 3600.0))
    grid = build_grid(grid_cols * cell_m, grid_rows * cell_m, cell_m)
    matrix = manhattan_matrix(grid_rows, grid_cols, cell_m, speed_mps)
    times = np.sort(rng.uniform(0, horizon_s, n_requests)).astype(int)
    stop_ids = rng.integers(0, grid.n_stops, size=(n_requests, 2))
    jitter = rng.uniform(-0.45 * cell_m, 0.45 * cell_m, size=(n_requests, 4))
    sizes = rng.choice(PARTY_SIZES, size=n_requests, p=PARTY_WEIGHTS)
    trips = []
    for i in range(n_requests):
        o = grid.stops[int(stop_ids[i, 0])].position
        d = grid.stops[int(stop_ids[i, 1])].position
        trips.append(
            TripRecord(
                int(times[i]),
                o[0] + jitter[i, 0], o[1] + jitter[i, 1],
                d[0] + jitter[i, 2], d[1] + jitter[i, 3],
                int(sizes[i]),
            )
        )
    return SynthInstance(grid, matrix, trips)


def save_trips(trips: Sequence[TripRecord], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRIP_HEADER)
        for t in trips:
            w.writerow(
                [t.request_time, f"{t.pickup_x:.3f}", f"{t.pickup_y:.3f}",
                 f"{t.dropoff_x:.3f}", f"{t.dropoff_y:.3f}", t.passengers]
            )


def write_instance(inst: SynthInstance, out_dir) -> dict[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "trips": os.path.join(out_dir, "trips.csv"),
        "matrix": os.path.join(out_dir, "matrix.csv"),
        "stops": os.path.join(out_dir, "stops.csv"),
    }
    save_trips(inst.trips, paths["trips"])
    save_matrix(inst.matrix, paths["matrix"])
    save_stops(inst.grid.stops, paths["stops"])
    return paths


# ---------------------------------------------------------------------------
# Reporting


def histogram(values: Sequence[float], width: float) -> list[tuple[float, float, int]]:
    """Fixed-width bins from zero through the max value; empty input gives
    no rows."""
    if len(values) == 0:
        return []
    n_bins = int(max(values) // width) + 1
    counts = [0] * n_bins
    for v in values:
        counts[int(v // width)] += 1
    return [(i * width, (i + 1) * width, c) for i, c in enumerate(counts)]


def column_ratio(n_vehicles: int, n_open: int, columns: int) -> Optional[float]:
    """Generated columns as a share of every possible one- and two-request
    column: |V| * (n + n*(n-1)/2)."""
    denom = n_vehicles * (n_open + n_open * (n_open - 1) // 2)
    if denom == 0:
        return None
    return columns / denom


def summarize(report: SimulationReport) -> dict:
    """Deterministic run summary; wall-clock timings are deliberately kept
    out so identical seeded runs serialize identically."""
    waits = [r.wait for r in report.riders]
    devs = [r.deviation for r in report.riders]
    assigns = [r.final_assignment_time for r in report.riders]
    ratios = [
        ratio
        for e in report.epochs
        if (ratio := column_ratio(report.n_vehicles, e.n_open, e.columns)) is not None
    ]
    reassigned = sum(1 for r in report.riders if r.n_assignments > 1)

    def stats(vals):
        if not vals:
            return {"mean": 0.0, "std": 0.0, "min": 0, "max": 0}
        a = np.asarray(vals, dtype=float)
        return {
            "mean": float(a.mean()),
            "std": float(a.std()),
            "min": float(a.min()),
            "max": float(a.max()),
        }

    return {
        "solver": report.solver,
        "seed": report.seed,
        "n_vehicles": report.n_vehicles,
        "capacity": report.capacity,
        "epoch_len_s": report.epoch_len,
        "requests": report.n_requests,
        "completed": len(report.riders),
        "epochs": len(report.epochs),
        "wait_s": stats(waits),
        "deviation_s": stats(devs),
        "final_assignment_s": stats(assigns),
        "reassigned_pct": 100.0 * reassigned / len(report.riders) if report.riders else 0.0,
        "columns_total": sum(e.columns for e in report.epochs),
        "column_ratio_mean": float(np.mean(ratios)) if ratios else 0.0,
        "column_ratio_median": float(np.median(ratios)) if ratios else 0.0,
        "deadline_overruns": report.deadline_overruns,
    }


def _write_hist(path, rows, unit="s"):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"bin_lo_{unit}", f"bin_hi_{unit}", "count"])
        for lo, hi, c in rows:
            w.writerow([f"{lo:g}", f"{hi:g}", c])


def write_report(report: SimulationReport, out_dir) -> dict[str, str]:
    """Summary JSON plus the per-metric CSVs. Timing lives in its own file
    so summary.json stays byte-identical across identical seeded runs."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}

    paths["summary"] = os.path.join(out_dir, "summary.json")
    with open(paths["summary"], "w") as f:
        json.dump(summarize(report), f, indent=2, sort_keys=True)
        f.write("\n")

    paths["timing"] = os.path.join(out_dir, "timing.json")
    with open(paths["timing"], "w") as f:
        json.dump(
            {
                "total_solve_ms": sum(e.solve_ms for e in report.epochs),
                "max_epoch_solve_ms": max((e.solve_ms for e in report.epochs), default=0.0),
                "deadline_overruns": report.deadline_overruns,
            },
            f,
            indent=2,
            sort_keys=True,
        )
        f.write("\n")

    paths["wait_hist"] = os.path.join(out_dir, "wait_hist.csv")
    _write_hist(paths["wait_hist"], histogram([r.wait for r in report.riders], WAIT_BIN_S))
    paths["deviation_hist"] = os.path.join(out_dir, "deviation_hist.csv")
    _write_hist(paths["deviation_hist"], histogram([r.deviation for r in report.riders], DEVIATION_BIN_S))
    paths["assignment_hist"] = os.path.join(out_dir, "assignment_hist.csv")
    _write_hist(
        paths["assignment_hist"],
        histogram([max(0, r.final_assignment_time) for r in report.riders], ASSIGNMENT_BIN_S),
    )

    paths["utilization"] = os.path.join(out_dir, "utilization.csv")
    with open(paths["utilization"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "mean_load", "busy_vehicles"])
        for e in report.epochs:
            w.writerow([e.epoch, f"{e.mean_load:.6f}", e.busy_vehicles])

    paths["columns"] = os.path.join(out_dir, "columns.csv")
    with open(paths["columns"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "open_requests", "columns", "ratio", "cg_iterations"])
        for e in report.epochs:
            ratio = column_ratio(report.n_vehicles, e.n_open, e.columns)
            w.writerow([e.epoch, e.n_open, e.columns, "" if ratio is None else f"{ratio:.6f}", e.cg_iterations])

    paths["solve_times"] = os.path.join(out_dir, "solve_times.csv")
    with open(paths["solve_times"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "solve_ms", "deadline_hit"])
        for e in report.epochs:
            w.writerow([e.epoch, f"{e.solve_ms:.3f}", int(e.deadline_hit)])

    return paths


# ---------------------------------------------------------------------------
# CLI


def _parse_grid(spec: str) -> tuple[int, int, float]:
    try:
        dims, cell = spec.split(":")
        w, h = dims.lower().split("x")
        return int(w), int(h), float(cell)
    except ValueError:
        raise InputError(f"bad grid spec {spec!r}; expected WxH:CELL, e.g. 10x10:200") from None


def _oracle_solver(problem, deadline_s):
    """Static solve by exhaustive enumeration, packaged like the production
    result. Only viable on micro instances; the oracle refuses otherwise."""
    from .master import MasterInstance, MasterSolution

    res = oracle_static_optimum(problem)
    sol = MasterSolution(y=np.zeros(0), z={rid: 1.0 for rid in res.unserved}, objective=res.objective)

    class _Result:
        solution = sol
        routes = res.routes
        served = res.served
        unserved = res.unserved
        rmp_objectives: list[float] = []
        n_generated = 0
        cg_iterations = 0
        deadline_hit = False
        objective = res.objective

    return _Result()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ridedispatch",
        description="Replay a demand trace through the rolling-horizon ride-sharing dispatcher.",
    )
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--trips", help="trips CSV to replay")
    src.add_argument("--synth", type=int, metavar="N", help="generate N synthetic requests instead")
    p.add_argument("--rate", type=float, help="synthetic demand in requests/hour (alternative to --synth N)")
    p.add_argument("--horizon", type=int, default=3600, help="synthetic demand window in seconds")
    p.add_argument("--speed", type=float, default=5.0, help="synthetic vehicle speed, m/s")
    p.add_argument("--vehicles", type=int, default=2000)
    p.add_argument("--capacity", type=int, default=5)
    p.add_argument("--alpha", type=float, default=1.5, help="multiplicative in-vehicle time allowance")
    p.add_argument("--beta", type=int, default=240, help="additive in-vehicle time allowance, seconds")
    p.add_argument("--delta", type=float, default=420.0, help="first-epoch no-service penalty")
    p.add_argument("--epoch-len", type=int, default=30)
    p.add_argument("--deadline", type=float, default=None, help="wall-clock budget per epoch solve, seconds")
    p.add_argument("--matrix", help="travel-time matrix CSV (required with --trips)")
    p.add_argument("--grid", required=True, metavar="WxH:CELL", help="stop grid, e.g. 10x10:200")
    p.add_argument("--service", type=int, default=0, help="boarding/alighting seconds per stop")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--lon0", type=float, help="projection origin longitude (trips are lon/lat)")
    p.add_argument("--lat0", type=float, help="projection origin latitude")
    p.add_argument("--oracle-mode", action="store_true", help="exhaustive solver; micro instances only")
    p.add_argument("--no-prune", action="store_true", help="disable least-wait-vs-penalty request pruning")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cols, rows, cell = _parse_grid(args.grid)
        grid = build_grid(cols * cell, rows * cell, cell)

        if args.synth is not None or args.rate is not None:
            inst = synth(
                rows, cols, cell, seed=args.seed,
                n_requests=args.synth, rate_per_hour=args.rate if args.synth is None else None,
                horizon_s=args.horizon, speed_mps=args.speed,
            )
            write_instance(inst, os.path.join(args.out, "instance"))
            trips, matrix = inst.trips, inst.matrix
        else:
            if not args.matrix:
                raise InputError("--trips requires --matrix")
            from .model import load_matrix

            matrix = load_matrix(args.matrix)
            trips = parse_trips(args.trips)
        if matrix.n != grid.n_stops:
            raise InputError(f"matrix has {matrix.n} stops but the grid has {grid.n_stops}")

        projection = None
        if args.lon0 is not None or args.lat0 is not None:
            if args.lon0 is None or args.lat0 is None:
                raise InputError("--lon0 and --lat0 must be given together")
            projection = Projection(args.lon0, args.lat0)

        requests = ingest(trips, grid, matrix, args.capacity, args.service, projection)
        config = EpochConfig(
            epoch_len=args.epoch_len,
            deadline=args.deadline,
            penalty=PenaltyParams(delta=args.delta, epoch_len=args.epoch_len),
            policy=DeviationPolicy(alpha=args.alpha, beta=args.beta),
            prune=not args.no_prune,
        )
        solver = None
        solver_name = "column-generation"
        if args.oracle_mode:
            if args.vehicles > 4 or len(requests) > 6:
                raise InputError("--oracle-mode needs at most 4 vehicles and 6 requests")
            solver = _oracle_solver
            solver_name = "oracle"
        report = run(
            requests, args.vehicles, args.capacity, matrix, config,
            seed=args.seed, static_solver=solver, solver_name=solver_name,
        )
        paths = write_report(report, args.out)
    except (InputError, OracleSizeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT

    s = summarize(report)
    print(
        f"{s['completed']}/{s['requests']} requests served over {s['epochs']} epochs | "
        f"mean wait {s['wait_s']['mean']:.1f}s, mean deviation {s['deviation_s']['mean']:.1f}s | "
        f"report: {paths['summary']}"
    )
    if report.deadline_overruns:
        print(f"warning: {report.deadline_overruns} epoch solves overran the deadline", file=sys.stderr)
        return EXIT_DEADLINE
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())

"""Domain types shared by the whole engine: virtual-stop grid, travel-time
matrix, requests, vehicle states, the in-vehicle deviation cap, and the
escalating cost of leaving a request unserved.

Times are integer seconds throughout; only costs (which involve 2**x) are
floats. Everything here is immutable after construction and safe to share
across workers.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

# Effectively-unbounded shift end; large enough to never bind, small enough
# to keep all arithmetic in exact integers.
NO_SHIFT_END = 10**12


@dataclass(frozen=True)
class Stop:
    """A curb location where riders board and alight."""

    id: int
    cell: tuple[int, int]  # (row, col) in the grid
    position: tuple[float, float]  # planar meters (x, y)


class Grid:
    """Uniform grid of virtual stops, one at the center of each square cell.

    Cell membership is by floor division from the origin; a point on a
    cell's upper edge belongs to the next cell, and points outside the grid
    clamp to the nearest boundary cell (demand data is noisy, so clamping
    beats rejection).
    """

    def __init__(self, width_m: float, height_m: float, cell_m: float):
        if cell_m <= 0:
            raise ValueError("cell size must be positive")
        self.width_m = float(width_m)
        self.height_m = float(height_m)
        self.cell_m = float(cell_m)
        self.cols = max(1, math.ceil(width_m / cell_m))
        self.rows = max(1, math.ceil(height_m / cell_m))
        stops = []
        for r in range(self.rows):
            for c in range(self.cols):
                pos = ((c + 0.5) * self.cell_m, (r + 0.5) * self.cell_m)
                stops.append(Stop(id=r * self.cols + c, cell=(r, c), position=pos))
        self.stops: list[Stop] = stops

    @property
    def n_stops(self) -> int:
        return self.rows * self.cols

    def snap(self, x_m: float, y_m: float) -> Stop:
        c = min(max(int(math.floor(x_m / self.cell_m)), 0), self.cols - 1)
        r = min(max(int(math.floor(y_m / self.cell_m)), 0), self.rows - 1)
        return self.stops[r * self.cols + c]


def build_grid(width_m: float, height_m: float, cell_m: float) -> Grid:
    """Grid of virtual stops covering a width_m x height_m region."""
    return Grid(width_m, height_m, cell_m)


class TravelTimeMatrix:
    """Stop-to-stop travel times in whole, nonnegative seconds.

    The matrix must satisfy the triangle inequality: both the per-vehicle
    request pruning rule and the route-shortening argument behind it depend
    on it, so a violating matrix is rejected at load time rather than
    producing silently wrong dispatches.
    """

    def __init__(self, times, validate: bool = True, sample_seed: int = 0):
        t = np.asarray(times, dtype=np.int64)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ValueError("travel-time matrix must be square")
        if (t < 0).any():
            raise ValueError("travel times must be nonnegative")
        if (np.diag(t) != 0).any():
            raise ValueError("diagonal travel times must be zero")
        self.n: int = int(t.shape[0])
        self.t = t
        self.t.setflags(write=False)
        # Plain nested lists: measurably faster than ndarray scalar lookups
        # in the scheduling inner loops.
        self.rows: list[list[int]] = t.tolist()
        if validate:
            self.validate_triangle(sample_seed=sample_seed)

    def travel(self, i: int, j: int) -> int:
        return self.rows[i][j]

    def validate_triangle(self, sample_seed: int = 0) -> None:
        """Exhaustive check up to n=200; above that, 200 seeded rows are
        checked completely (every middle point and endpoint)."""
        t = self.t
        if self.n <= 200:
            rows_to_check = np.arange(self.n)
        else:
            rows_to_check = np.random.default_rng(sample_seed).permutation(self.n)[:200]
        for i in rows_to_check:
            via = t[i, :][:, None] + t  # via[j, k] = t[i][j] + t[j][k]
            slack = via.min(axis=0) - t[i, :]
            if (slack < 0).any():
                k = int(np.argmin(slack))
                j = int(np.argmin(via[:, k]))
                raise ValueError(
                    f"triangle inequality violated: t[{i}][{k}]={t[i, k]} > "
                    f"t[{i}][{j}]+t[{j}][{k}]={t[i, j] + t[j, k]}"
                )


@dataclass(frozen=True)
class Request:
    """One rider group to carry from origin to dest, released at time e."""

    id: int
    e: int  # earliest pickup, seconds
    origin: int  # stop id
    dest: int  # stop id
    q: int  # party size
    t_short: int  # direct origin->dest travel time, seconds
    service: int = 0  # boarding/alighting duration, seconds

    def __post_init__(self):
        if self.q < 1:
            raise ValueError(f"request {self.id}: party size must be >= 1")
        if self.t_short < 0 or self.service < 0:
            raise ValueError(f"request {self.id}: negative duration")


@dataclass(frozen=True)
class OnboardRider:
    """A rider already in a vehicle whose dropoff is still owed."""

    request_id: int
    picked_up_at: int  # seconds
    dest: int  # stop id
    q: int
    t_short: int
    service: int = 0


@dataclass(frozen=True)
class VehicleState:
    """Where and when a vehicle becomes plannable once the next plan activates.

    ``onboard`` keeps the incumbent dropoff order of the previous plan; the
    route search preserves that relative order.
    """

    id: int
    depart_stop: int
    depart_time: int
    onboard: tuple[OnboardRider, ...] = ()
    capacity: int = 5
    shift_start: int = 0
    shift_end: int = NO_SHIFT_END

    def __post_init__(self):
        load = sum(r.q for r in self.onboard)
        if not 0 <= load <= self.capacity:
            raise ValueError(f"vehicle {self.id}: onboard load {load} outside [0, {self.capacity}]")
        if self.depart_time < self.shift_start:
            raise ValueError(f"vehicle {self.id}: departs before shift start")
        ids = [r.request_id for r in self.onboard]
        if len(ids) != len(set(ids)):
            raise ValueError(f"vehicle {self.id}: duplicate onboard rider")

    @property
    def load(self) -> int:
        return sum(r.q for r in self.onboard)


@dataclass(frozen=True)
class DeviationPolicy:
    """Cap on each rider's in-vehicle time: the larger of a multiplicative
    and an additive allowance over the direct travel time."""

    alpha: float = 1.5
    beta: int = 240

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")

    def bound(self, t_short: int) -> float:
        return max(self.alpha * t_short, self.beta + t_short)


def deviation_bound(policy: DeviationPolicy, t_short: int) -> float:
    """Longest allowed in-vehicle time for a trip whose direct time is t_short."""
    return policy.bound(t_short)


@dataclass(frozen=True)
class PenaltyParams:
    """Shape of the no-service cost: delta in the first epoch a request is
    schedulable, doubling every ten epochs it keeps waiting."""

    delta: float = 420.0
    epoch_len: int = 30

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.epoch_len <= 0:
            raise ValueError("epoch length must be positive")


def penalty(params: PenaltyParams, now: int, e_c: int) -> float:
    """Cost of not scheduling a request released at e_c, evaluated at time now.

    The exponent is clamped at zero so a freshly batched request costs
    exactly delta to skip; without the clamp it would be cheaper to drop a
    request in its first schedulable epoch than later, which is backwards.
    """
    age = max(0, now - e_c)
    return params.delta * 2.0 ** (age / (10.0 * params.epoch_len))


@dataclass(frozen=True)
class StaticProblem:
    """One epoch's standalone assignment problem: which vehicle serves which
    open requests, given current penalties."""

    vehicles: tuple[VehicleState, ...]
    requests: tuple[Request, ...]
    penalties: Mapping[int, float]  # request id -> cost of not serving now
    matrix: TravelTimeMatrix
    policy: DeviationPolicy

    def __post_init__(self):
        for r in self.requests:
            if r.id not in self.penalties:
                raise ValueError(f"request {r.id} has no penalty")

    def request_map(self) -> dict[int, Request]:
        return {r.id: r for r in self.requests}


# ---------------------------------------------------------------------------
# File formats: stops CSV (id,x_m,y_m) and matrix CSV (first line n, then
# n rows of n integer seconds).


def save_stops(stops: Sequence[Stop], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "x_m", "y_m"])
        for s in stops:
            w.writerow([s.id, f"{s.position[0]:.1f}", f"{s.position[1]:.1f}"])


def load_stops(path) -> list[Stop]:
    stops = []
    with open(path, newline="") as f:
        for i, row in enumerate(csv.DictReader(f)):
            stops.append(Stop(id=int(row["id"]), cell=(0, i), position=(float(row["x_m"]), float(row["y_m"]))))
    if [s.id for s in stops] != list(range(len(stops))):
        raise ValueError("stop ids must be 0..n-1 in order")
    return stops


def save_matrix(matrix: TravelTimeMatrix, path) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"{matrix.n}\n")
        for row in matrix.rows:
            f.write(",".join(str(v) for v in row) + "\n")


def load_matrix(path, validate: bool = True) -> TravelTimeMatrix:
    with open(path, newline="") as f:
        first = f.readline().strip()
        try:
            n = int(first)
        except ValueError:
            raise ValueError("matrix file must start with the stop count") from None
        rows = []
        for _ in range(n):
            line = f.readline()
            if not line:
                raise ValueError(f"matrix file truncated: expected {n} rows")
            rows.append([int(v) for v in line.strip().split(",")])
            if len(rows[-1]) != n:
                raise ValueError(f"matrix row {len(rows) - 1} has {len(rows[-1])} entries, expected {n}")
    return TravelTimeMatrix(rows, validate=validate)

"""The restricted master problem over generated columns, the final integral
route selection, and the driver that alternates pricing waves with master
re-solves until no improving column remains.

Every vehicle always carries a zero-cost seed column that serves only its
owed dropoffs, so the master is feasible from the first solve (worst case:
every open request pays its penalty).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .model import StaticProblem
from .pricing import Column, ColumnSearch, DualValues, _base_route
from .schedule import Route, Schedule
from .simplex import OPTIMAL, solve_lp

INT_TOL = 1e-6  # a variable this close to 0/1 counts as integral
_MAX_BB_NODES = 200000


def seed_column(vehicle, problem: StaticProblem) -> Column:
    """The always-available column: serve nobody new, drop off what is owed."""
    base = _base_route(vehicle, problem.request_map(), problem.matrix, problem.policy)
    if base is None:
        raise ValueError(f"vehicle {vehicle.id}: owed dropoffs are not schedulable from its state")
    return Column(vehicle.id, base.route, base.schedule, 0.0, frozenset())


class MasterInstance:
    """Column pool for one static solve, seeds first, deduplicated."""

    def __init__(self, problem: StaticProblem):
        self.problem = problem
        self.columns: list[Column] = []
        self._keys: set = set()
        for v in problem.vehicles:
            self.add_columns([seed_column(v, problem)])

    def add_columns(self, cols) -> int:
        added = 0
        for c in cols:
            k = c.key()
            if k in self._keys:
                continue
            self._keys.add(k)
            self.columns.append(c)
            added += 1
        return added

    def request_ids(self) -> list[int]:
        return sorted(r.id for r in self.problem.requests)

    def vehicle_ids(self) -> list[int]:
        return sorted(v.id for v in self.problem.vehicles)


@dataclass
class MasterSolution:
    """A master solve: route weights aligned with the instance's column list,
    per-request unserved weights, and (for LP solves) the row duals."""

    y: np.ndarray
    z: dict[int, float]
    objective: float
    duals: Optional[DualValues] = None

    def is_integral(self, tol: float = INT_TOL) -> bool:
        return all(abs(v - round(v)) <= tol for v in self.y) and all(
            abs(v - round(v)) <= tol for v in self.z.values()
        )


def _build_lp(instance: MasterInstance, col_idx: list[int]):
    """Equality-form LP over the chosen columns plus one unserved variable
    per request. Rows: request cover rows (sorted by id), then one-route
    rows per vehicle (sorted by id)."""
    req_ids = instance.request_ids()
    veh_ids = instance.vehicle_ids()
    req_row = {rid: i for i, rid in enumerate(req_ids)}
    veh_row = {vid: len(req_ids) + i for i, vid in enumerate(veh_ids)}
    m = len(req_ids) + len(veh_ids)
    n = len(col_idx) + len(req_ids)
    A = np.zeros((m, n))
    c = np.zeros(n)
    for j, idx in enumerate(col_idx):
        col = instance.columns[idx]
        for rid in col.served:
            A[req_row[rid], j] = 1.0
        A[veh_row[col.vehicle_id], j] = 1.0
        c[j] = col.cost
    for i, rid in enumerate(req_ids):
        A[i, len(col_idx) + i] = 1.0
        c[len(col_idx) + i] = instance.problem.penalties[rid]
    b = np.ones(m)
    return A, b, c, req_ids, veh_ids


def solve_rmp(
    instance: MasterInstance,
    lp_solver: Callable = solve_lp,
    dump_path=None,
) -> MasterSolution:
    """LP relaxation over the current column pool, with row duals."""
    col_idx = list(range(len(instance.columns)))
    A, b, c, req_ids, veh_ids = _build_lp(instance, col_idx)
    if dump_path is not None:
        with open(dump_path, "w") as f:
            f.write(write_lp_format(instance))
    res = lp_solver(c, A, b)
    if res.status != OPTIMAL:
        raise RuntimeError(f"master LP unexpectedly {res.status}")
    y = res.x[: len(col_idx)].copy()
    z = {rid: float(res.x[len(col_idx) + i]) for i, rid in enumerate(req_ids)}
    duals = DualValues(
        pi={rid: float(res.duals[i]) for i, rid in enumerate(req_ids)},
        sigma={vid: float(res.duals[len(req_ids) + i]) for i, vid in enumerate(veh_ids)},
    )
    return MasterSolution(y=y, z=z, objective=float(res.objective), duals=duals)


def _exact_objective(instance: MasterInstance, chosen: list[int]) -> float:
    served: set[int] = set()
    total = 0.0
    for idx in chosen:
        total += instance.columns[idx].cost
        served |= instance.columns[idx].served
    for rid in instance.request_ids():
        if rid not in served:
            total += instance.problem.penalties[rid]
    return total


def _solution_from_chosen(instance: MasterInstance, chosen: list[int]) -> MasterSolution:
    y = np.zeros(len(instance.columns))
    for idx in chosen:
        y[idx] = 1.0
    served = set()
    for idx in chosen:
        served |= instance.columns[idx].served
    z = {rid: 0.0 if rid in served else 1.0 for rid in instance.request_ids()}
    return MasterSolution(y=y, z=z, objective=_exact_objective(instance, chosen))


def solve_final(instance: MasterInstance, lp_solver: Callable = solve_lp) -> MasterSolution:
    """Optimal integral selection over the restricted column pool.

    Branch and bound over column fixings with LP bounding: branch on the
    vehicle whose weight distribution has the highest entropy, fixing its
    most fractional column in (explored first) or out. The pool is small,
    so this is exact.
    """
    n_cols = len(instance.columns)
    cols_of_vehicle: dict[int, list[int]] = {}
    for idx, col in enumerate(instance.columns):
        cols_of_vehicle.setdefault(col.vehicle_id, []).append(idx)

    # Seeds-only incumbent: always feasible.
    seeds = [cols_of_vehicle[vid][0] for vid in instance.vehicle_ids()]
    for idx in seeds:
        assert not instance.columns[idx].served, "seed columns must come first per vehicle"
    best_obj = _exact_objective(instance, seeds)
    best_chosen = seeds

    def node_available(banned: frozenset, forced: tuple) -> Optional[list[int]]:
        used: set[int] = set()
        veh_forced: dict[int, int] = {}
        for idx in forced:
            col = instance.columns[idx]
            if col.served & used or col.vehicle_id in veh_forced:
                return None
            used |= col.served
            veh_forced[col.vehicle_id] = idx
        avail = []
        for idx in range(n_cols):
            if idx in banned:
                continue
            col = instance.columns[idx]
            fv = veh_forced.get(col.vehicle_id)
            if fv is not None and idx != fv:
                continue
            if idx not in forced and col.served & used:
                continue
            avail.append(idx)
        per_vehicle = {vid: 0 for vid in instance.vehicle_ids()}
        for idx in avail:
            per_vehicle[instance.columns[idx].vehicle_id] += 1
        if any(cnt == 0 for cnt in per_vehicle.values()):
            return None
        return avail

    stack: list[tuple[frozenset, tuple]] = [(frozenset(), ())]
    nodes = 0
    while stack:
        banned, forced = stack.pop()
        nodes += 1
        if nodes > _MAX_BB_NODES:
            raise RuntimeError("final selection exceeded the node budget")
        avail = node_available(banned, forced)
        if avail is None:
            continue
        A, b, c, req_ids, veh_ids = _build_lp(instance, avail)
        res = lp_solver(c, A, b)
        if res.status != OPTIMAL:
            continue  # infeasible under these fixings
        if res.objective >= best_obj - 1e-9:
            continue
        yv = {idx: float(res.x[j]) for j, idx in enumerate(avail)}
        frac = [idx for idx, v in yv.items() if abs(v - round(v)) > INT_TOL]
        if not frac:
            chosen = sorted(idx for idx, v in yv.items() if v > 0.5)
            obj = _exact_objective(instance, chosen)
            if obj < best_obj - 1e-12:
                best_obj = obj
                best_chosen = chosen
            continue
        # Entropy of each vehicle's weight distribution; branch on the most
        # undecided vehicle's most fractional column.
        best_vid, best_ent = None, -1.0
        for vid in instance.vehicle_ids():
            ws = [yv[idx] for idx in cols_of_vehicle[vid] if idx in yv and yv[idx] > INT_TOL]
            ent = -sum(w * math.log(w) for w in ws if w > 0.0)
            if ent > best_ent + 1e-12:
                best_ent, best_vid = ent, vid
        cand = [idx for idx in cols_of_vehicle[best_vid] if idx in yv and abs(yv[idx] - round(yv[idx])) > INT_TOL]
        branch_idx = min(cand, key=lambda idx: (abs(yv[idx] - 0.5), idx))
        stack.append((banned | {branch_idx}, forced))  # out
        stack.append((banned, forced + (branch_idx,)))  # in, explored first
    return _solution_from_chosen(instance, best_chosen)


def write_lp_format(instance: MasterInstance) -> str:
    """The current master as CPLEX-LP-format text, for offline debugging."""
    lines = ["Minimize"]
    terms = []
    for j, col in enumerate(instance.columns):
        if col.cost != 0.0:
            terms.append(f"{col.cost:.12g} y{j}")
    for rid in instance.request_ids():
        terms.append(f"{instance.problem.penalties[rid]:.12g} z_{rid}")
    lines.append(" obj: " + (" + ".join(terms) if terms else "0 y0"))
    lines.append("Subject To")
    for rid in instance.request_ids():
        parts = [f"y{j}" for j, col in enumerate(instance.columns) if rid in col.served]
        parts.append(f"z_{rid}")
        lines.append(f" cover_{rid}: " + " + ".join(parts) + " = 1")
    for vid in instance.vehicle_ids():
        parts = [f"y{j}" for j, col in enumerate(instance.columns) if col.vehicle_id == vid]
        lines.append(f" vehicle_{vid}: " + " + ".join(parts) + " = 1")
    lines.append("Bounds")
    for j in range(len(instance.columns)):
        lines.append(f" 0 <= y{j} <= 1")
    for rid in instance.request_ids():
        lines.append(f" 0 <= z_{rid} <= 1")
    lines.append("End")
    return "\n".join(lines) + "\n"


@dataclass
class StaticSolveResult:
    """Everything the rolling-horizon engine needs from one static solve."""

    solution: MasterSolution
    instance: MasterInstance
    routes: dict[int, tuple[Route, Schedule]]  # selected route per vehicle
    served: dict[int, int]  # request id -> vehicle id
    unserved: frozenset[int]
    rmp_objectives: list[float] = field(default_factory=list)
    n_generated: int = 0
    cg_iterations: int = 0
    deadline_hit: bool = False

    @property
    def objective(self) -> float:
        return self.solution.objective


def _extract_routes(instance: MasterInstance, sol: MasterSolution):
    routes: dict[int, tuple[Route, Schedule]] = {}
    served: dict[int, int] = {}
    for idx, col in enumerate(instance.columns):
        if sol.y[idx] > 0.5:
            routes[col.vehicle_id] = (col.route, col.schedule)
            for rid in col.served:
                served[rid] = col.vehicle_id
    unserved = frozenset(rid for rid in instance.request_ids() if rid not in served)
    return routes, served, unserved


def solve_static(
    problem: StaticProblem,
    deadline_s: Optional[float] = None,
    prune: bool = True,
    lp_solver: Callable = solve_lp,
    dump_dir=None,
) -> StaticSolveResult:
    """Full static solve: seed the master, alternate pricing waves with LP
    re-solves until no negative column (or the budget runs out), then pick
    the best integral selection from the generated pool."""
    deadline = time.monotonic() + deadline_s if deadline_s is not None else None
    search = ColumnSearch(problem, prune=prune)
    instance = MasterInstance(problem)
    iteration = 0
    rmp = solve_rmp(instance, lp_solver, dump_path=_dump_path(dump_dir, iteration))
    trace = [rmp.objective]
    n_generated = 0
    deadline_hit = False
    while True:
        if deadline is not None and time.monotonic() > deadline:
            deadline_hit = True
            break
        cols, hit = search.generate_columns(rmp.duals, deadline)
        if hit:
            deadline_hit = True
            break
        if not cols:
            break
        added = instance.add_columns(cols)
        if added == 0:
            break  # all duplicates; nothing new to price against
        n_generated += added
        iteration += 1
        rmp = solve_rmp(instance, lp_solver, dump_path=_dump_path(dump_dir, iteration))
        if rmp.objective > trace[-1] + 1e-6 * (1.0 + abs(trace[-1])):
            raise RuntimeError(
                f"master objective rose from {trace[-1]} to {rmp.objective} after adding columns"
            )
        trace.append(rmp.objective)
    final = solve_final(instance, lp_solver)
    assert final.objective >= trace[-1] - 1e-6 * (1.0 + abs(trace[-1])), "integral solution beat the LP bound"
    routes, served, unserved = _extract_routes(instance, final)
    return StaticSolveResult(
        solution=final,
        instance=instance,
        routes=routes,
        served=served,
        unserved=unserved,
        rmp_objectives=trace,
        n_generated=n_generated,
        cg_iterations=iteration,
        deadline_hit=deadline_hit,
    )


def _dump_path(dump_dir, iteration: int):
    if dump_dir is None:
        return None
    import os

    return os.path.join(dump_dir, f"rmp_{iteration:03d}.lp")

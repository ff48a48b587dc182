"""Exhaustive reference solvers for tiny instances.

These enumerate node orderings and request-to-vehicle assignments directly,
including full reordering of owed dropoffs (which the production search
never attempts), so they lower-bound the production objective and are used
to validate it in tests. They share only the schedule evaluator with the
production path; the search itself is independent.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .model import Request, StaticProblem, VehicleState
from .schedule import (
    Route,
    Schedule,
    build_route,
    dropoff_node,
    onboard_dropoff_node,
    pickup_node,
    schedule_route,
)

MAX_CANDIDATE_ROUTES = 10**7


class OracleSizeError(ValueError):
    """The instance is too large to enumerate; refusing beats silently
    spinning for hours."""


def ordering_count(n_requests: int, n_onboard: int) -> int:
    """Number of precedence-valid node orderings for n request pairs plus
    n_onboard free dropoffs: (2k + m)! / 2^k."""
    return math.factorial(2 * n_requests + n_onboard) // (2**n_requests)


def oracle_route_optimum(
    vehicle: VehicleState,
    request_set: Sequence[Request],
    requests: Mapping[int, Request],
    matrix,
    policy,
) -> Optional[tuple[Route, int]]:
    """Exact minimum-wait route serving exactly ``request_set`` plus the
    vehicle's owed dropoffs, over every precedence-valid ordering."""
    reqs = sorted(request_set, key=lambda r: r.id)
    if ordering_count(len(reqs), len(vehicle.onboard)) > MAX_CANDIDATE_ROUTES:
        raise OracleSizeError(f"{len(reqs)} requests + {len(vehicle.onboard)} onboard is too large")

    rows = matrix.rows
    bound = policy.bound
    cap = vehicle.capacity
    shift_end = vehicle.shift_end

    # Candidate actions, each (sort rank, node, kind tag). Dropoffs unlock
    # once their pickup is placed; owed dropoffs are available from the start.
    picks = {r.id: r for r in reqs}
    onboard = {r.request_id: r for r in vehicle.onboard}

    best: list = [None, None]  # [wait, interior]

    def dfs(seq, stop, t_arr, service_prev, load, wait, unpicked, open_req, open_onboard, picked_at):
        if best[0] is not None and wait >= best[0]:
            return
        if t_arr > shift_end:
            return
        # Triangle-inequality lower bound on every open rider's final
        # in-vehicle time; if the direct run already busts the cap, no
        # extension can recover.
        for rid in open_req:
            r = picks[rid]
            lb = t_arr + service_prev + rows[stop][r.dest] - (picked_at[rid] + r.service)
            if lb > bound(r.t_short):
                return
        for rid in open_onboard:
            r = onboard[rid]
            lb = t_arr + service_prev + rows[stop][r.dest] - (r.picked_up_at + r.service)
            if lb > bound(r.t_short):
                return
        if not unpicked and not open_req and not open_onboard:
            if t_arr + service_prev > shift_end:
                return  # the run-out at the last stop busts the shift
            if best[0] is None or wait < best[0]:
                best[0] = wait
                best[1] = tuple(seq)
            return
        # Pickups first (by id), then request dropoffs, then owed dropoffs.
        for rid in sorted(unpicked):
            r = picks[rid]
            if load + r.q > cap:
                continue
            arr = t_arr + service_prev + rows[stop][r.origin]
            if arr < r.e:
                arr = r.e
            node = pickup_node(r)
            picked_at[rid] = arr
            dfs(
                seq + [node], r.origin, arr, r.service, load + r.q,
                wait + arr - r.e, unpicked - {rid}, open_req | {rid}, open_onboard, picked_at,
            )
            del picked_at[rid]
        for rid in sorted(open_req):
            r = picks[rid]
            arr = t_arr + service_prev + rows[stop][r.dest]
            if arr - (picked_at[rid] + r.service) > bound(r.t_short):
                continue
            dfs(
                seq + [dropoff_node(r)], r.dest, arr, r.service, load - r.q,
                wait, unpicked, open_req - {rid}, open_onboard, picked_at,
            )
        for rid in sorted(open_onboard):
            r = onboard[rid]
            arr = t_arr + service_prev + rows[stop][r.dest]
            if arr - (r.picked_up_at + r.service) > bound(r.t_short):
                continue
            dfs(
                seq + [onboard_dropoff_node(r)], r.dest, arr, r.service, load - r.q,
                wait, unpicked, open_req, open_onboard - {rid}, picked_at,
            )

    dfs(
        [], vehicle.depart_stop, vehicle.depart_time, 0, vehicle.load, 0,
        frozenset(picks), frozenset(), frozenset(onboard), {},
    )
    if best[0] is None:
        return None
    route = build_route(vehicle, best[1])
    sched = schedule_route(vehicle, route, requests, matrix, policy)
    assert sched.feasible and sched.wait_cost == best[0], "oracle recurrence disagrees with the evaluator"
    return route, best[0]


@dataclass
class OracleStatic:
    objective: float
    routes: dict[int, tuple[Route, Schedule]]
    served: dict[int, int]  # request id -> vehicle id
    unserved: frozenset[int]


def oracle_static_optimum(problem: StaticProblem, prune: bool = False) -> OracleStatic:
    """Exact optimum of one static problem by enumerating every assignment
    of requests to vehicles (or to nobody) and every node ordering.

    With ``prune`` the per-vehicle request pool is first filtered by the
    least-wait-vs-penalty rule, which must not change the optimum.
    Ties break toward the lexicographically smallest assignment.
    """
    from .pricing import prune_requests  # local import: no cycle at module load

    vehicles = sorted(problem.vehicles, key=lambda v: v.id)
    requests = sorted(problem.requests, key=lambda r: r.id)
    req_map = problem.request_map()

    allowed: dict[int, list[Request]] = {}
    total = 0
    for v in vehicles:
        pool = prune_requests(v, requests, problem.penalties, problem.matrix) if prune else requests
        allowed[v.id] = list(pool)
        for k in range(len(pool) + 1):
            total += math.comb(len(pool), k) * ordering_count(k, len(v.onboard))
        if total > MAX_CANDIDATE_ROUTES:
            raise OracleSizeError(f"about {total} candidate routes; refusing above {MAX_CANDIDATE_ROUTES}")

    cache: dict[tuple[int, frozenset], Optional[tuple[Route, int]]] = {}

    def route_for(v: VehicleState, ids: frozenset) -> Optional[tuple[Route, int]]:
        key = (v.id, ids)
        if key not in cache:
            cache[key] = oracle_route_optimum(v, [req_map[i] for i in ids], req_map, problem.matrix, problem.policy)
        return cache[key]

    allowed_ids = {vid: {r.id for r in pool} for vid, pool in allowed.items()}

    # Cheapest conceivable cost of each not-yet-assigned request: its penalty
    # or the least wait on any remaining vehicle, whichever is smaller.
    def remaining_bound(rem_reqs: set[int], v_pos: int) -> float:
        total_lb = 0.0
        rows = problem.matrix.rows
        for rid in rem_reqs:
            r = req_map[rid]
            lb = problem.penalties[rid]
            for v in vehicles[v_pos:]:
                if rid in allowed_ids[v.id]:
                    w = max(0, v.depart_time + rows[v.depart_stop][r.origin] - r.e)
                    if w < lb:
                        lb = w
            total_lb += lb
        return total_lb

    best: list = [None, None, None]  # objective, assignment key, chosen subsets

    def assign(v_pos: int, rem: list[int], cost: float, chosen: list[frozenset]):
        if best[0] is not None and cost + remaining_bound(set(rem), v_pos) > best[0] + 1e-12:
            return
        if v_pos == len(vehicles):
            obj = cost + sum(problem.penalties[rid] for rid in rem)
            key = tuple(tuple(sorted(s)) for s in chosen)
            if best[0] is None or obj < best[0] - 1e-12 or (abs(obj - best[0]) <= 1e-12 and key < best[1]):
                best[0] = obj
                best[1] = key
                best[2] = list(chosen)
            return
        v = vehicles[v_pos]
        pool = sorted(set(rem) & allowed_ids[v.id])
        for k in range(len(pool) + 1):
            for combo in itertools.combinations(pool, k):
                ids = frozenset(combo)
                res = route_for(v, ids)
                if res is None:
                    continue
                assign(
                    v_pos + 1,
                    [rid for rid in rem if rid not in ids],
                    cost + res[1],
                    chosen + [ids],
                )

    assign(0, [r.id for r in requests], 0.0, [])
    if best[0] is None:
        raise ValueError("no feasible assignment: some vehicle cannot schedule its owed dropoffs")

    routes: dict[int, tuple[Route, Schedule]] = {}
    served: dict[int, int] = {}
    for v, ids in zip(vehicles, best[2]):
        route, _ = route_for(v, ids)
        sched = schedule_route(v, route, req_map, problem.matrix, problem.policy)
        routes[v.id] = (route, sched)
        for rid in ids:
            served[rid] = v.id
    unserved = frozenset(r.id for r in requests if r.id not in served)
    return OracleStatic(float(best[0]), routes, served, unserved)

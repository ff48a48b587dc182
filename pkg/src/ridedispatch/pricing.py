"""Per-vehicle route generation for the master problem.

Three layers: an admissibility filter that drops request/vehicle pairs whose
least achievable wait already exceeds the request's no-service penalty, an
insertion search for the best route over a fixed request set, and the wave
search that sweeps vehicles in dual order emitting request-disjoint columns
of negative reduced cost, growing the per-column request count only when a
smaller count yields nothing.

The insertion search is the hot loop of the whole engine, so it runs on a
prepared flat representation of the base route (plain ints, no node
objects) and re-evaluates only the part of the schedule an insertion can
change; the winning candidate is re-checked through the reference
evaluator before it becomes a column.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .model import Request, StaticProblem, VehicleState
from .schedule import (
    Node,
    NodeKind,
    Route,
    Schedule,
    build_route,
    dropoff_node,
    onboard_dropoff_node,
    pickup_node,
    schedule_route,
)

# A column must price strictly below zero to be worth adding; this guard
# keeps float noise from regenerating value-zero columns forever.
NEGATIVE_TOL = 1e-9


@dataclass(frozen=True)
class DualValues:
    """Duals of the last master solve: pi per open request (cover row),
    sigma per vehicle (one-route row)."""

    pi: Mapping[int, float]
    sigma: Mapping[int, float]

    @classmethod
    def zeros(cls, request_ids, vehicle_ids) -> "DualValues":
        return cls({i: 0.0 for i in request_ids}, {v: 0.0 for v in vehicle_ids})


@dataclass(frozen=True)
class Column:
    """A feasible route for one vehicle, priced as a master variable."""

    vehicle_id: int
    route: Route
    schedule: Schedule
    cost: float  # wait cost of the route
    served: frozenset[int]

    def key(self) -> tuple:
        return (self.vehicle_id, self.route.order_key())


def prune_requests(
    vehicle: VehicleState,
    requests: Sequence[Request],
    penalties: Mapping[int, float],
    matrix,
) -> list[Request]:
    """Requests this vehicle may serve in some optimal solution.

    Keeps request l iff depart_time + t(depart, origin_l) - e_l <= p_l, the
    raw (unclamped) least-wait value; serving past that bound is dominated
    by paying the penalty, so those pairs never need to be searched.
    Equality is kept.
    """
    rows = matrix.rows
    u0 = vehicle.depart_time
    here = vehicle.depart_stop
    return [r for r in requests if u0 + rows[here][r.origin] - r.e <= penalties[r.id]]


@dataclass(frozen=True)
class _BestRoute:
    interior: tuple[Node, ...]
    served: frozenset[int]
    wait: int
    route: Route
    schedule: Schedule


def _base_route(vehicle: VehicleState, requests, matrix, policy) -> Optional[_BestRoute]:
    """Route serving only the vehicle's owed dropoffs, in incumbent order."""
    interior = tuple(onboard_dropoff_node(r) for r in vehicle.onboard)
    route = build_route(vehicle, interior)
    sched = schedule_route(vehicle, route, requests, matrix, policy, check=False)
    if not sched.feasible:
        return None
    return _BestRoute(interior, frozenset(), sched.wait_cost, route, sched)


class _PreparedBase:
    """Flat arrays of one base route plus its prefix states, so each
    candidate insertion costs integer arithmetic only."""

    __slots__ = (
        "vehicle", "interior", "n", "rows", "bound",
        "stops", "qs", "services", "kinds", "releases", "dev_ref", "dev_bound",
        "pre_time", "pre_load", "pre_stop", "pre_service", "pre_wait",
        "base_pick_time", "suffix_wait", "base_time", "base_wait",
    )

    def __init__(self, vehicle: VehicleState, base: _BestRoute, requests, matrix, policy):
        self.vehicle = vehicle
        self.interior = base.interior
        self.rows = matrix.rows
        self.bound = policy.bound
        inner = base.interior
        n = len(inner)
        self.n = n
        self.stops = [nd.stop for nd in inner]
        self.qs = [nd.q for nd in inner]
        self.services = [nd.service for nd in inner]
        self.kinds = [nd.kind for nd in inner]
        self.releases = [requests[nd.request_id].e if nd.kind is NodeKind.PICKUP else 0 for nd in inner]
        onboard = {r.request_id: r for r in vehicle.onboard}
        # Deviation data per node: for request dropoffs the (request id, bound),
        # for owed dropoffs the fixed reference completion and bound.
        self.dev_ref = []
        self.dev_bound = []
        for nd in inner:
            if nd.kind is NodeKind.DROPOFF:
                self.dev_ref.append(("req", nd.request_id, requests[nd.request_id].service))
                self.dev_bound.append(policy.bound(requests[nd.request_id].t_short))
            elif nd.kind is NodeKind.ONBOARD_DROPOFF:
                r = onboard[nd.request_id]
                self.dev_ref.append(("fixed", r.picked_up_at + r.service, 0))
                self.dev_bound.append(policy.bound(r.t_short))
            else:
                self.dev_ref.append(None)
                self.dev_bound.append(0.0)

        # Prefix state before position i: arrival time and service of the
        # node the leg departs from, load, stop, and accumulated wait.
        arr = base.schedule.arrival  # aligned with Source + interior + Sink
        loads = base.schedule.load
        self.pre_time = [arr[i] for i in range(n + 1)]
        self.pre_load = [loads[i] for i in range(n + 1)]
        self.pre_stop = [vehicle.depart_stop] + self.stops
        self.pre_service = [0] + self.services
        pw = [0]
        w = 0
        for idx, nd in enumerate(inner):
            if nd.kind is NodeKind.PICKUP:
                w += arr[idx + 1] - requests[nd.request_id].e
            pw.append(w)
        self.pre_wait = pw
        self.base_wait = w
        self.suffix_wait = [w - x for x in pw]
        self.base_time = [arr[i + 1] for i in range(n)]
        self.base_pick_time = {
            nd.request_id: arr[idx + 1]
            for idx, nd in enumerate(inner)
            if nd.kind is NodeKind.PICKUP
        }

    def best_insertion(self, req: Request, wait_limit: Optional[float] = None):
        """Best feasible (pickup, dropoff) placement for ``req``; returns
        (wait, i, j) or None. ``wait_limit`` drops candidates whose wait can
        never go below an external bound (partial waits only grow)."""
        rows = self.rows
        cap = self.vehicle.capacity
        n = self.n
        p_stop, d_stop, p_e, p_q, p_srv = req.origin, req.dest, req.e, req.q, req.service
        d_bound = self.bound(req.t_short)
        best_wait = None
        best_pos = None

        for i in range(n + 1):
            # Serve the pickup right after the prefix.
            t0 = self.pre_time[i] + self.pre_service[i] + rows[self.pre_stop[i]][p_stop]
            if t0 < p_e:
                t0 = p_e
            load0 = self.pre_load[i] + p_q
            if load0 > cap:
                continue
            wait0 = self.pre_wait[i] + (t0 - p_e)
            hi = _min_opt(best_wait, wait_limit)
            if hi is not None and wait0 + self.suffix_wait[i] > hi:
                continue
            # Walk the dropoff position forward, extending the mid segment
            # (nodes riding between pickup and dropoff) one node at a time.
            # Entries written into picks_mid are always refreshed before any
            # later read, so the dict can be shared across j values.
            t_mid, srv_mid, stop_mid = t0, p_srv, p_stop
            load_mid, wait_mid = load0, wait0
            picks_mid: dict[int, int] = {req.id: t0}
            for j in range(i, n + 1):
                if j > i:
                    k = j - 1  # absorb base node k into the mid segment
                    t_mid = t_mid + srv_mid + rows[stop_mid][self.stops[k]]
                    kind = self.kinds[k]
                    if kind is NodeKind.PICKUP:
                        if t_mid < self.releases[k]:
                            t_mid = self.releases[k]
                        wait_mid += t_mid - self.releases[k]
                        picks_mid[self.interior[k].request_id] = t_mid
                    load_mid += self.qs[k]
                    if load_mid > cap:
                        break  # the same breach recurs at every later j
                    if self.dev_ref[k] is not None and t_mid - self._dev_start(k, picks_mid) > self.dev_bound[k]:
                        break
                    srv_mid = self.services[k]
                    stop_mid = self.stops[k]
                    hi = _min_opt(best_wait, wait_limit)
                    if hi is not None and wait_mid + self.suffix_wait[j] > hi:
                        break  # waits only grow with j
                hi = _min_opt(best_wait, wait_limit)
                wait = self._finish(j, t_mid, srv_mid, stop_mid, d_stop, p_srv, t0, d_bound,
                                    picks_mid, wait_mid, req.service, hi)
                if wait is None:
                    continue
                if wait_limit is not None and wait > wait_limit:
                    continue
                if best_wait is None or wait < best_wait or (
                    wait == best_wait and self._tie_better(req, (i, j), best_pos)
                ):
                    best_wait = wait
                    best_pos = (i, j)
        if best_pos is None:
            return None
        return best_wait, best_pos[0], best_pos[1]

    def _dev_start(self, k: int, picks: dict[int, int]) -> int:
        """Ride start reference of the dropoff at base position k."""
        ref = self.dev_ref[k]
        if ref[0] == "req":
            pick_t = picks.get(ref[1])
            if pick_t is None:
                pick_t = self.base_pick_time[ref[1]]
            return pick_t + ref[2]
        return ref[1]

    def _finish(self, j, t_mid, srv_mid, stop_mid, d_stop, p_srv, p_time, d_bound,
                picks_mid, wait_mid, d_service, hi):
        """Serve the dropoff after the mid segment, then the untouched base
        suffix; returns the candidate's total wait or None if infeasible."""
        rows = self.rows
        t = t_mid + srv_mid + rows[stop_mid][d_stop]
        if t - (p_time + p_srv) > d_bound:
            return None
        # Suffix loads equal the base's (the served pair nets to zero), so
        # only times, waits, and deviation checks need revisiting.
        wait = wait_mid
        prev_t, prev_srv, prev_stop = t, d_service, d_stop
        for k in range(j, self.n):
            arr = prev_t + prev_srv + rows[prev_stop][self.stops[k]]
            kind = self.kinds[k]
            if kind is NodeKind.PICKUP:
                if arr < self.releases[k]:
                    arr = self.releases[k]
                wait += arr - self.releases[k]
                picks_mid[self.interior[k].request_id] = arr
            if arr == self.base_time[k]:
                # Delay fully absorbed: the rest of the base plays out
                # unchanged, and any dropoff here or later only got a shorter
                # ride (its pickup can only have moved later), so the base's
                # own feasibility covers it.
                return wait + self.suffix_wait[k + 1]
            if self.dev_ref[k] is not None and arr - self._dev_start(k, picks_mid) > self.dev_bound[k]:
                return None
            if hi is not None and wait + self.suffix_wait[k + 1] > hi:
                return None
            prev_t, prev_srv, prev_stop = arr, self.services[k], self.stops[k]
        if prev_t + prev_srv > self.vehicle.shift_end:
            return None
        return wait

    def _tie_better(self, req: Request, pos, best_pos) -> bool:
        """Tie order on equal wait: lexicographically smaller node sequence."""
        from .schedule import node_sort_key

        a = tuple(node_sort_key(nd) for nd in self.build(req, *pos))
        b = tuple(node_sort_key(nd) for nd in self.build(req, *best_pos))
        return a < b

    def build(self, req: Request, i: int, j: int) -> tuple[Node, ...]:
        inner = self.interior
        return inner[:i] + (pickup_node(req),) + inner[i:j] + (dropoff_node(req),) + inner[j:]


def _min_opt(a, b):
    if a is None:
        return b
    if b is None:
        return a
    return a if a < b else b


def _materialize(
    vehicle: VehicleState,
    base: _BestRoute,
    prepared: _PreparedBase,
    req: Request,
    i: int,
    j: int,
    wait: int,
    requests,
    matrix,
    policy,
) -> _BestRoute:
    """Build the actual route for a winning insertion and cross-check the
    fast evaluator against the reference one."""
    interior = prepared.build(req, i, j)
    route = build_route(vehicle, interior)
    sched = schedule_route(vehicle, route, requests, matrix, policy, check=False)
    assert sched.feasible and sched.wait_cost == wait, (
        f"insertion evaluator disagrees with the schedule evaluator "
        f"({sched.feasible}, {sched.wait_cost} vs {wait})"
    )
    return _BestRoute(interior, base.served | {req.id}, wait, route, sched)


def _insert_request(
    vehicle: VehicleState,
    base: _BestRoute,
    prepared: _PreparedBase,
    req: Request,
    requests,
    matrix,
    policy,
    wait_limit: Optional[float] = None,
) -> Optional[_BestRoute]:
    """Best feasible placement of req's pair into the base, validated through
    the reference evaluator."""
    found = prepared.best_insertion(req, wait_limit)
    if found is None:
        return None
    wait, i, j = found
    return _materialize(vehicle, base, prepared, req, i, j, wait, requests, matrix, policy)


def best_route_for_set(
    vehicle: VehicleState,
    request_set: Sequence[Request],
    duals: DualValues,
    requests: Mapping[int, Request],
    matrix,
    policy,
    deadline: Optional[float] = None,
) -> Optional[tuple[Route, Schedule, float]]:
    """Minimum-wait route serving exactly ``request_set`` plus the vehicle's
    owed dropoffs, with its reduced cost under ``duals``.

    A single request is placed exhaustively. Larger sets are built greedily,
    one request at a time, each step placing the cheapest remaining request
    exhaustively into the incumbent ordering; the result is an upper bound
    on the true set optimum for sizes above two.
    """
    cur = _base_route(vehicle, requests, matrix, policy)
    if cur is None:
        return None
    remaining = sorted(request_set, key=lambda r: r.id)
    while remaining:
        if deadline is not None and time.monotonic() > deadline:
            return None
        prepared = _PreparedBase(vehicle, cur, requests, matrix, policy)
        step_best = None
        step_key = None
        for req in remaining:
            cand = _insert_request(vehicle, cur, prepared, req, requests, matrix, policy)
            if cand is None:
                continue
            key = (cand.wait - duals.pi[req.id], req.id, cand.route.order_key())
            if step_key is None or key < step_key:
                step_key = key
                step_best = (req, cand)
        if step_best is None:
            return None
        req, cur = step_best
        remaining.remove(req)
    reduced = cur.wait - sum(duals.pi[i] for i in cur.served) - duals.sigma[vehicle.id]
    return cur.route, cur.schedule, reduced


class ColumnSearch:
    """One static solve's pricing state.

    Per vehicle it keeps the admissible request list and a lazily built
    table per set size: the best route found for every admissible k-set,
    obtained by inserting one request into the best (k-1)-set routes. Route
    quality for a fixed set does not depend on the duals, so the tables are
    built once per static solve and only the argmin over sets is re-run as
    the duals move.
    """

    def __init__(self, problem: StaticProblem, prune: bool = True):
        self.problem = problem
        self.requests = problem.request_map()
        self.prune = prune
        self.admissible: dict[int, list[Request]] = {}
        self.base: dict[int, _BestRoute] = {}
        self.tables: dict[int, dict[int, dict[frozenset, _BestRoute]]] = {}
        self.wait_floor: dict[int, dict[int, int]] = {}  # vehicle -> request -> least wait
        ordered = sorted(problem.requests, key=lambda r: r.id)
        for v in problem.vehicles:
            pool = prune_requests(v, ordered, problem.penalties, problem.matrix) if prune else list(ordered)
            self.admissible[v.id] = pool
            base = _base_route(v, self.requests, problem.matrix, problem.policy)
            if base is None:
                raise ValueError(f"vehicle {v.id}: owed dropoffs are not schedulable from its state")
            self.base[v.id] = base
            self.tables[v.id] = {0: {frozenset(): base}}
            rows = problem.matrix.rows
            self.wait_floor[v.id] = {
                r.id: max(0, v.depart_time + rows[v.depart_stop][r.origin] - r.e) for r in pool
            }

    def _reduced(self, entry: _BestRoute, vehicle_id: int, duals: DualValues) -> float:
        return entry.wait - sum(duals.pi[i] for i in entry.served) - duals.sigma[vehicle_id]

    def _worth_extending(self, entry: _BestRoute, vehicle_id: int, duals: DualValues) -> bool:
        """Can any superset of this entry price negative under the current
        duals? Waits only grow with extensions, and adding request x costs at
        least its least achievable wait while crediting pi_x, so supersets
        can improve on this entry by at most the positive parts of those
        differences. Sets failing the bound cannot spawn a useful column
        this call and are left unexpanded."""
        floor = self.wait_floor[vehicle_id]
        gain = 0.0
        for r in self.admissible[vehicle_id]:
            if r.id not in entry.served:
                g = duals.pi[r.id] - floor[r.id]
                if g > 0.0:
                    gain += g
        reduced_floor = entry.wait - sum(duals.pi[i] for i in entry.served) - duals.sigma[vehicle_id] - gain
        return reduced_floor < -NEGATIVE_TOL

    def _table(self, vehicle: VehicleState, k: int, duals: DualValues, deadline: Optional[float]) -> dict:
        """Best-route table for k-sets, extending the (k-1)-table by every
        admissible request; a set reached along several paths keeps the first
        cheapest route found. Entries persist across calls (route quality is
        dual-free); extension is re-attempted each call because the
        worth-extending bound moves with the duals."""
        table = self.tables[vehicle.id].setdefault(k, {})
        prev = self.tables[vehicle.id][k - 1] if k > 1 else self.tables[vehicle.id][0]
        from .schedule import node_sort_key

        built: dict[frozenset, tuple] = {}  # this call's candidates, min over parents
        for served, entry in sorted(prev.items(), key=lambda kv: sorted(kv[0])):
            if deadline is not None and time.monotonic() > deadline:
                break  # anytime: whatever is built so far can still be priced
            if not self._worth_extending(entry, vehicle.id, duals):
                continue
            prepared = None
            for req in self.admissible[vehicle.id]:
                if req.id in served:
                    continue
                key = served | {req.id}
                if key in table:
                    continue  # built in an earlier call
                if prepared is None:
                    prepared = _PreparedBase(vehicle, entry, self.requests, self.problem.matrix, self.problem.policy)
                known = built.get(key)
                found = prepared.best_insertion(req, wait_limit=known[0] if known else None)
                if found is None:
                    continue
                wait, i, j = found
                if known is None or wait < known[0]:
                    built[key] = (wait, i, j, req, prepared, entry)
                elif wait == known[0]:
                    a = prepared.build(req, i, j)
                    b = known[4].build(known[3], known[1], known[2])
                    if tuple(map(node_sort_key, a)) < tuple(map(node_sort_key, b)):
                        built[key] = (wait, i, j, req, prepared, entry)
        for key, (wait, i, j, req, prep, parent) in built.items():
            table[key] = _materialize(vehicle, parent, prep, req, i, j, wait,
                                      self.requests, self.problem.matrix, self.problem.policy)
        return table

    def generate_sized_columns(
        self,
        k: int,
        duals: DualValues,
        deadline: Optional[float] = None,
    ) -> tuple[list[Column], bool]:
        """One wave: for each vehicle in decreasing sigma order, the
        admissible k-set with the cheapest reduced cost over requests not yet
        claimed this wave; emits it as a column when it prices negative and
        claims its requests so later vehicles cannot reuse them. Returns
        (columns, deadline_hit)."""
        order = sorted(self.problem.vehicles, key=lambda v: (-duals.sigma[v.id], v.id))
        claimed: set[int] = set()
        out: list[Column] = []
        pi = duals.pi
        for v in order:
            if deadline is not None and time.monotonic() > deadline:
                return out, True
            table = self._table(v, k, duals, deadline)
            sigma_v = duals.sigma[v.id]
            best = None
            best_key = None
            for served, entry in table.items():
                if claimed and served & claimed:
                    continue
                reduced = entry.wait - sum(pi[i] for i in served) - sigma_v
                key = (reduced, tuple(sorted(served)), entry.route.order_key())
                if best_key is None or key < best_key:
                    best_key = key
                    best = entry
            if best is None:
                continue
            if best_key[0] < -NEGATIVE_TOL:
                out.append(Column(v.id, best.route, best.schedule, float(best.wait), best.served))
                claimed |= best.served
        return out, False

    def generate_columns(self, duals: DualValues, deadline: Optional[float] = None) -> tuple[list[Column], bool]:
        """Wave search by increasing request count: returns the first
        nonempty wave. An empty result with no deadline flag means no
        negative column exists in the searched neighborhood."""
        for k in range(1, len(self.problem.requests) + 1):
            cols, hit = self.generate_sized_columns(k, duals, deadline)
            if hit:
                return [], True
            if cols:
                return cols, False
            if all(not self.tables[v.id].get(k) for v in self.problem.vehicles):
                break  # nothing feasible at size k, so nothing at k+1 either
        return [], False

"""Rolling-horizon dispatch engine.

Time is cut into fixed epochs. During epoch tau the engine batches the
requests released in [tau*L, (tau+1)*L), executes and commits every planned
stop arriving before (tau+1)*L (a vehicle already driving toward its next
stop is never re-routed), and re-solves the static problem over everything
still open, with penalties escalated by age. The new plan takes effect at
the epoch boundary. Requests that were assigned but whose pickup had not
been reached are thrown back into the open pool each epoch, so assignments
can improve until the moment a pickup is committed; escalating penalties
guarantee nobody is thrown back forever.
"""

from __future__ import annotations

import hashlib
import time as _time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .master import StaticSolveResult, solve_static
from .model import (
    DeviationPolicy,
    NO_SHIFT_END,
    OnboardRider,
    PenaltyParams,
    Request,
    StaticProblem,
    TravelTimeMatrix,
    penalty,
)
from .schedule import Node, NodeKind


@dataclass(frozen=True)
class EpochConfig:
    """Clocking and knobs of the rolling horizon."""

    epoch_len: int = 30
    deadline: Optional[float] = None  # wall seconds per epoch solve; None = unbudgeted
    penalty: PenaltyParams = field(default_factory=PenaltyParams)
    policy: DeviationPolicy = field(default_factory=DeviationPolicy)
    prune: bool = True
    validate: bool = True
    max_epochs: int = 500_000  # starvation guard

    def __post_init__(self):
        if self.deadline is not None and self.deadline > self.epoch_len:
            raise ValueError("per-epoch solve budget cannot exceed the epoch length")
        if self.penalty.epoch_len != self.epoch_len:
            raise ValueError("penalty epoch length disagrees with the clock epoch length")


def batch(requests: Iterable[Request], tau: int, epoch_len: int) -> list[Request]:
    """The requests released during epoch tau. Release times outside
    [tau*L, (tau+1)*L) are a caller bug and are rejected loudly."""
    lo, hi = tau * epoch_len, (tau + 1) * epoch_len
    out = []
    for r in requests:
        if not lo <= r.e < hi:
            raise ValueError(f"request {r.id} released at {r.e}s does not belong to epoch {tau} [{lo},{hi})")
        out.append(r)
    return out


class VehiclePlan:
    """One vehicle's mutable trajectory: the append-only committed prefix
    (hash-chained so mutation is detectable), the active plan tail, and who
    is currently in the vehicle."""

    def __init__(self, vehicle_id: int, capacity: int, start_stop: int, shift_end: int = NO_SHIFT_END):
        self.vehicle_id = vehicle_id
        self.capacity = capacity
        self.shift_end = shift_end
        self.stop = start_stop
        self.onboard: list[OnboardRider] = []
        self.active: list[tuple[Node, int]] = []  # (node, arrival), future only
        self.committed: list[tuple[Node, int]] = []
        self.chain: list[str] = []
        self.drop_order: dict[int, int] = {}  # request id -> dropoff position in last plan

    @property
    def load(self) -> int:
        return sum(r.q for r in self.onboard)

    def _commit(self, node: Node, t: int) -> None:
        prev = self.chain[-1] if self.chain else "genesis"
        payload = f"{prev}|{node.kind.name}:{node.request_id}:{node.stop}:{t}"
        self.chain.append(hashlib.sha256(payload.encode()).hexdigest())
        self.committed.append((node, t))

    def advance(self, boundary: int) -> tuple[list[tuple[Node, int]], int, int]:
        """Execute planned nodes arriving before ``boundary``; the remainder
        of the plan is discarded (it will be re-optimized). Returns the
        executed events and the (stop, time) the next plan departs from."""
        events: list[tuple[Node, int]] = []
        i = 0
        while i < len(self.active) and self.active[i][1] < boundary:
            node, t = self.active[i]
            self._commit(node, t)
            events.append((node, t))
            self.stop = node.stop
            i += 1
        if i < len(self.active):
            nxt, t = self.active[i]  # first stop at/after the boundary
            self.stop = nxt.stop
            depart_stop, depart_time = nxt.stop, t + nxt.service
        else:
            depart_stop, depart_time = self.stop, boundary
        self.active = []
        return events, depart_stop, depart_time

    def set_plan(self, timed_nodes: Sequence[tuple[Node, int]]) -> None:
        self.active = list(timed_nodes)
        self.drop_order = {
            node.request_id: i
            for i, (node, _) in enumerate(timed_nodes)
            if node.kind in (NodeKind.DROPOFF, NodeKind.ONBOARD_DROPOFF)
        }

    def ordered_onboard(self) -> tuple[OnboardRider, ...]:
        return tuple(sorted(self.onboard, key=lambda r: self.drop_order.get(r.request_id, 0)))


@dataclass
class RiderRecord:
    """Lifecycle of one completed request."""

    request_id: int
    e: int
    q: int
    origin: int
    dest: int
    t_short: int
    pickup: int
    dropoff: int
    vehicle: int
    wait: int
    deviation: int
    final_assignment_time: int
    n_assignments: int  # distinct vehicles this request was ever assigned to


@dataclass
class EpochRecord:
    epoch: int
    n_open: int  # open requests in this epoch's solve (0 = nothing to solve)
    n_new: int  # requests batched during this epoch
    columns: int  # columns generated by pricing this epoch
    cg_iterations: int
    rmp_first: float
    rmp_last: float
    objective: float
    solve_ms: float
    deadline_hit: bool
    mean_load: float
    busy_vehicles: int


@dataclass
class SimulationReport:
    n_vehicles: int
    capacity: int
    epoch_len: int
    seed: int
    solver: str
    n_requests: int
    riders: list[RiderRecord]
    epochs: list[EpochRecord]
    deadline_overruns: int

    def completed_ids(self) -> set[int]:
        return {r.request_id for r in self.riders}


class SimulationError(RuntimeError):
    pass


def make_fleet(n_vehicles: int, n_stops: int, seed: int) -> list[int]:
    """Initial stop per vehicle: round-robin over a seeded permutation of the
    stops, which spreads the fleet evenly."""
    perm = np.random.default_rng(seed).permutation(n_stops)
    return [int(perm[v % n_stops]) for v in range(n_vehicles)]


def extract_vehicle_state(plan: VehiclePlan, boundary: int, shift_end: int):
    """Commit everything before ``boundary`` and derive the state the next
    solve plans from. Side effects on ``plan``; pure bookkeeping of events
    (pickups/dropoffs) is the caller's job."""
    events, depart_stop, depart_time = plan.advance(boundary)
    return events, depart_stop, depart_time


def assemble_static_instance(
    pending: dict[int, Request],
    vehicle_states,
    now: int,
    params: PenaltyParams,
    matrix: TravelTimeMatrix,
    policy: DeviationPolicy,
) -> StaticProblem:
    """The epoch's standalone problem: every open request with its penalty at
    the solving epoch's start, plus the departing state of every vehicle."""
    requests = tuple(sorted(pending.values(), key=lambda r: r.id))
    penalties = {r.id: penalty(params, now, r.e) for r in requests}
    return StaticProblem(tuple(vehicle_states), requests, penalties, matrix, policy)


def _default_solver(problem: StaticProblem, deadline_s, prune: bool) -> StaticSolveResult:
    return solve_static(problem, deadline_s=deadline_s, prune=prune)


def run(
    requests: Sequence[Request],
    n_vehicles: int,
    capacity: int,
    matrix: TravelTimeMatrix,
    config: EpochConfig,
    seed: int = 0,
    static_solver: Optional[Callable] = None,
    solver_name: str = "column-generation",
    shift_end: int = NO_SHIFT_END,
) -> SimulationReport:
    """Replay a demand trace to completion.

    Epochs keep rolling past the demand window until every ingested request
    has been dropped off; escalating penalties make that guaranteed rather
    than hoped-for. Raises SimulationError if the epoch guard trips first.
    """
    for r in requests:
        if r.q > capacity:
            raise ValueError(f"request {r.id}: party of {r.q} exceeds capacity {capacity}; split it upstream")
        if r.e < 0:
            raise ValueError(f"request {r.id}: negative release time")
    stream = sorted(requests, key=lambda r: (r.e, r.id))
    if static_solver is None:

        def static_solver(problem, deadline_s):
            return _default_solver(problem, deadline_s, config.prune)

    plans = [
        VehiclePlan(v, capacity, stop, shift_end)
        for v, stop in enumerate(make_fleet(n_vehicles, matrix.n, seed))
    ]
    pending: dict[int, Request] = {}
    batched_prev: list[Request] = []
    completed: dict[int, RiderRecord] = {}
    assignment: dict[int, Optional[int]] = {}
    last_change: dict[int, int] = {}
    seen_vehicles: dict[int, set[int]] = {}
    pickup_info: dict[int, tuple[int, int]] = {}  # rid -> (time, vehicle)
    prefix_guard: dict[int, tuple[int, str]] = {v.vehicle_id: (0, "") for v in plans}
    by_id = {r.id: r for r in stream}
    if len(by_id) != len(stream):
        raise ValueError("duplicate request ids")

    epochs: list[EpochRecord] = []
    overruns = 0
    L = config.epoch_len
    idx = 0
    tau = 0
    while True:
        hi = (tau + 1) * L
        new: list[Request] = []
        while idx < len(stream) and stream[idx].e < hi:
            new.append(stream[idx])
            idx += 1
        batch(new, tau, L)  # validates interval membership
        for r in batched_prev:
            pending[r.id] = r
        batched_prev = new

        # Commit executed stops and derive each vehicle's departing state.
        states = []
        for plan in plans:
            events, depart_stop, depart_time = plan.advance(hi)
            for node, t in events:
                _apply_event(plan, node, t, by_id, pending, completed, pickup_info,
                             assignment, last_change, seen_vehicles, config, L)
            states.append(
                _vehicle_state(plan, depart_stop, depart_time, capacity, shift_end)
            )
        if config.validate:
            _audit(plans, prefix_guard, pending, batched_prev, completed, idx)

        n_open = len(pending)
        has_onboard = any(plan.onboard for plan in plans)
        if n_open or has_onboard:
            problem = assemble_static_instance(
                pending, states, tau * L, config.penalty, matrix, config.policy
            )
            t0 = _time.perf_counter()
            result = static_solver(problem, config.deadline)
            solve_ms = (_time.perf_counter() - t0) * 1000.0
            if result.deadline_hit:
                overruns += 1
            for plan, state in zip(plans, states):
                route, sched = result.routes[plan.vehicle_id]
                if not sched.feasible:
                    raise SimulationError(f"solver returned an infeasible route for vehicle {plan.vehicle_id}")
                plan.set_plan(list(zip(route.interior, sched.arrival[1:-1])))
            for rid in pending:
                cur = result.served.get(rid)
                if rid not in assignment or assignment[rid] != cur:
                    assignment[rid] = cur
                    last_change[rid] = tau
                if cur is not None:
                    seen_vehicles.setdefault(rid, set()).add(cur)
            rec = EpochRecord(
                epoch=tau,
                n_open=n_open,
                n_new=len(new),
                columns=result.n_generated,
                cg_iterations=result.cg_iterations,
                rmp_first=result.rmp_objectives[0] if result.rmp_objectives else 0.0,
                rmp_last=result.rmp_objectives[-1] if result.rmp_objectives else 0.0,
                objective=result.objective,
                solve_ms=solve_ms,
                deadline_hit=result.deadline_hit,
                mean_load=sum(p.load for p in plans) / len(plans),
                busy_vehicles=sum(1 for p in plans if p.onboard or p.active),
            )
            epochs.append(rec)
        else:
            epochs.append(
                EpochRecord(tau, 0, len(new), 0, 0, 0.0, 0.0, 0.0, 0.0, False, 0.0, 0)
            )

        tau += 1
        drained = (
            idx >= len(stream)
            and not pending
            and not batched_prev
            and all(not p.onboard and not p.active for p in plans)
        )
        if drained:
            break
        if tau > config.max_epochs:
            raise SimulationError(
                f"epoch guard tripped at {tau} epochs with {len(pending)} requests still open"
            )

    riders = [completed[rid] for rid in sorted(completed)]
    if len(riders) != len(stream):
        missing = sorted(set(by_id) - set(completed))
        raise SimulationError(f"requests never completed: {missing}")
    return SimulationReport(
        n_vehicles=n_vehicles,
        capacity=capacity,
        epoch_len=L,
        seed=seed,
        solver=solver_name,
        n_requests=len(stream),
        riders=riders,
        epochs=epochs,
        deadline_overruns=overruns,
    )


def _vehicle_state(plan: VehiclePlan, depart_stop: int, depart_time: int, capacity: int, shift_end: int):
    from .model import VehicleState

    return VehicleState(
        id=plan.vehicle_id,
        depart_stop=depart_stop,
        depart_time=depart_time,
        onboard=plan.ordered_onboard(),
        capacity=capacity,
        shift_start=0,
        shift_end=shift_end,
    )


def _apply_event(
    plan: VehiclePlan,
    node: Node,
    t: int,
    by_id: dict[int, Request],
    pending: dict[int, Request],
    completed: dict[int, RiderRecord],
    pickup_info: dict[int, tuple[int, int]],
    assignment: dict[int, Optional[int]],
    last_change: dict[int, int],
    seen_vehicles: dict[int, set[int]],
    config: EpochConfig,
    L: int,
) -> None:
    if node.kind is NodeKind.PICKUP:
        req = by_id[node.request_id]
        if config.validate:
            assert t >= req.e, f"pickup before release for request {req.id}"
            assert node.request_id in pending, f"pickup of non-pending request {req.id}"
        del pending[node.request_id]
        plan.onboard.append(
            OnboardRider(req.id, t, req.dest, req.q, req.t_short, req.service)
        )
        if config.validate:
            assert plan.load <= plan.capacity, f"vehicle {plan.vehicle_id} over capacity"
        pickup_info[node.request_id] = (t, plan.vehicle_id)
    elif node.kind in (NodeKind.DROPOFF, NodeKind.ONBOARD_DROPOFF):
        rid = node.request_id
        plan.onboard = [r for r in plan.onboard if r.request_id != rid]
        pick_t, veh = pickup_info[rid]
        req = by_id[rid]
        deviation = t - (pick_t + req.service) - req.t_short
        if config.validate:
            assert deviation >= 0, f"negative deviation for request {rid}"
            assert deviation <= config.policy.bound(req.t_short), f"deviation bound broken for request {rid}"
        completed[rid] = RiderRecord(
            request_id=rid,
            e=req.e,
            q=req.q,
            origin=req.origin,
            dest=req.dest,
            t_short=req.t_short,
            pickup=pick_t,
            dropoff=t,
            vehicle=veh,
            wait=pick_t - req.e,
            deviation=deviation,
            final_assignment_time=last_change.get(rid, 0) * L - req.e,
            n_assignments=len(seen_vehicles.get(rid, {veh})),
        )


def _audit(plans, prefix_guard, pending, batched_prev, completed, n_ingested) -> None:
    onboard_total = sum(len(p.onboard) for p in plans)
    accounted = len(pending) + len(batched_prev) + onboard_total + len(completed)
    assert accounted == n_ingested, (
        f"conservation broken: {accounted} accounted vs {n_ingested} ingested"
    )
    for plan in plans:
        n_prev, h_prev = prefix_guard[plan.vehicle_id]
        assert len(plan.chain) >= n_prev, f"vehicle {plan.vehicle_id}: committed prefix shrank"
        if n_prev:
            assert plan.chain[n_prev - 1] == h_prev, (
                f"vehicle {plan.vehicle_id}: committed prefix was rewritten"
            )
        prefix_guard[plan.vehicle_id] = (
            len(plan.chain),
            plan.chain[-1] if plan.chain else "",
        )

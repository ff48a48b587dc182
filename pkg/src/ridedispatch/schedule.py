"""Deterministic evaluation of a fixed stop sequence for one vehicle.

Given a route (ordered pickups, dropoffs, and owed dropoffs of riders
already in the vehicle), compute earliest arrival times and loads, the
total wait cost, and a feasibility verdict carrying the first violated
constraint. Earliest arrival is the only schedule ever considered for a
fixed sequence: delaying any node can only raise waits and in-vehicle
times, so it is both cost-minimal and maximally feasible.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Optional

from .model import DeviationPolicy, OnboardRider, Request, TravelTimeMatrix, VehicleState


class NodeKind(Enum):
    SOURCE = 0
    PICKUP = 1
    DROPOFF = 2
    ONBOARD_DROPOFF = 3
    SINK = 4


@dataclass(frozen=True)
class Node:
    kind: NodeKind
    stop: int
    request_id: Optional[int] = None
    q: int = 0  # signed: positive boards, negative alights
    service: int = 0


def pickup_node(req: Request) -> Node:
    return Node(NodeKind.PICKUP, req.origin, req.id, req.q, req.service)


def dropoff_node(req: Request) -> Node:
    return Node(NodeKind.DROPOFF, req.dest, req.id, -req.q, req.service)


def onboard_dropoff_node(rider: OnboardRider) -> Node:
    return Node(NodeKind.ONBOARD_DROPOFF, rider.dest, rider.request_id, -rider.q, rider.service)


def node_sort_key(node: Node) -> tuple:
    return (node.kind.value, -1 if node.request_id is None else node.request_id, node.stop)


@dataclass(frozen=True)
class Route:
    """Ordered node sequence Source ... Sink for one vehicle."""

    vehicle_id: int
    nodes: tuple[Node, ...]

    @property
    def interior(self) -> tuple[Node, ...]:
        return self.nodes[1:-1]

    def served(self) -> frozenset[int]:
        return frozenset(n.request_id for n in self.nodes if n.kind is NodeKind.PICKUP)

    def order_key(self) -> tuple:
        return tuple(node_sort_key(n) for n in self.interior)


def build_route(vehicle: VehicleState, interior: tuple[Node, ...]) -> Route:
    """Wrap an interior node sequence with the vehicle's source and a sink
    co-located with the last stop."""
    source = Node(NodeKind.SOURCE, vehicle.depart_stop)
    last_stop = interior[-1].stop if interior else vehicle.depart_stop
    sink = Node(NodeKind.SINK, last_stop)
    return Route(vehicle.id, (source,) + tuple(interior) + (sink,))


class Violation(Enum):
    CAPACITY = "capacity"
    DEVIATION = "deviation"
    SHIFT_END = "shift_end"


class RouteStructureError(ValueError):
    """The node sequence itself is malformed (as opposed to time/capacity
    infeasible): missing pairs, wrong precedence, or owed dropoffs absent."""


@dataclass(frozen=True)
class Schedule:
    """Earliest-arrival timing of a route. On infeasible routes the arrays
    stop at the violating node."""

    arrival: tuple[int, ...]
    load: tuple[int, ...]  # persons in the vehicle after each node
    wait_cost: int  # sum of (pickup time - release) over new pickups
    feasible: bool
    violation: Optional[Violation] = None
    violating_request: Optional[int] = None


def check_structure(vehicle: VehicleState, route: Route, requests: Mapping[int, Request]) -> None:
    nodes = route.nodes
    if len(nodes) < 2 or nodes[0].kind is not NodeKind.SOURCE or nodes[-1].kind is not NodeKind.SINK:
        raise RouteStructureError("route must be Source ... Sink")
    if nodes[0].stop != vehicle.depart_stop:
        raise RouteStructureError("route source does not match the vehicle's departing stop")
    owed = {r.request_id for r in vehicle.onboard}
    picked: set[int] = set()
    dropped: set[int] = set()
    onboard_dropped: set[int] = set()
    for n in nodes[1:-1]:
        if n.kind is NodeKind.PICKUP:
            if n.request_id in picked:
                raise RouteStructureError(f"request {n.request_id} picked up twice")
            if n.request_id not in requests:
                raise RouteStructureError(f"unknown request {n.request_id}")
            if n.q != requests[n.request_id].q:
                raise RouteStructureError(f"request {n.request_id}: pickup size mismatch")
            picked.add(n.request_id)
        elif n.kind is NodeKind.DROPOFF:
            if n.request_id not in picked:
                raise RouteStructureError(f"request {n.request_id} dropped before pickup")
            if n.request_id in dropped:
                raise RouteStructureError(f"request {n.request_id} dropped twice")
            if n.q != -requests[n.request_id].q:
                raise RouteStructureError(f"request {n.request_id}: dropoff size mismatch")
            dropped.add(n.request_id)
        elif n.kind is NodeKind.ONBOARD_DROPOFF:
            if n.request_id not in owed:
                raise RouteStructureError(f"rider {n.request_id} is not onboard vehicle {vehicle.id}")
            if n.request_id in onboard_dropped:
                raise RouteStructureError(f"onboard rider {n.request_id} dropped twice")
            onboard_dropped.add(n.request_id)
        else:
            raise RouteStructureError("source/sink inside the route")
    if picked != dropped:
        raise RouteStructureError(f"unmatched pickups: {sorted(picked - dropped)}")
    if onboard_dropped != owed:
        raise RouteStructureError(f"owed dropoffs missing: {sorted(owed - onboard_dropped)}")


def schedule_route(
    vehicle: VehicleState,
    route: Route,
    requests: Mapping[int, Request],
    matrix: TravelTimeMatrix,
    policy: DeviationPolicy,
    check: bool = True,
) -> Schedule:
    """Earliest-arrival schedule of ``route`` for ``vehicle``.

    Each node's arrival is the release time (for pickups) or the completion
    of the previous node plus the leg's travel time, whichever is later.
    Feasible iff loads stay within capacity, the vehicle finishes by its
    shift end, and every rider's in-vehicle time stays within the deviation
    bound of their direct trip.
    """
    if check:
        check_structure(vehicle, route, requests)

    rows = matrix.rows
    bound = policy.bound
    nodes = route.nodes
    onboard = {r.request_id: r for r in vehicle.onboard}

    arrival = [vehicle.depart_time]
    load = [vehicle.load]
    wait_cost = 0
    pickup_time: dict[int, int] = {}
    pickup_service: dict[int, int] = {}

    prev = nodes[0]
    t_prev = vehicle.depart_time
    w_prev = vehicle.load
    for idx in range(1, len(nodes)):
        nd = nodes[idx]
        t = t_prev + prev.service + rows[prev.stop][nd.stop]
        if nd.kind is NodeKind.PICKUP:
            req = requests[nd.request_id]
            if t < req.e:
                t = req.e
            wait_cost += t - req.e
            pickup_time[nd.request_id] = t
            pickup_service[nd.request_id] = req.service
        w = w_prev + nd.q
        arrival.append(t)
        load.append(w)
        assert w >= 0, "negative load: structural check missed a dropoff"
        if w > vehicle.capacity:
            return Schedule(tuple(arrival), tuple(load), wait_cost, False, Violation.CAPACITY, nd.request_id)
        if nd.kind is NodeKind.DROPOFF:
            elapsed = t - (pickup_time[nd.request_id] + pickup_service[nd.request_id])
            t_short = requests[nd.request_id].t_short
            assert elapsed >= t_short, "in-vehicle time below the direct time"
            if elapsed > bound(t_short):
                return Schedule(tuple(arrival), tuple(load), wait_cost, False, Violation.DEVIATION, nd.request_id)
        elif nd.kind is NodeKind.ONBOARD_DROPOFF:
            rider = onboard[nd.request_id]
            elapsed = t - (rider.picked_up_at + rider.service)
            if elapsed > bound(rider.t_short):
                return Schedule(tuple(arrival), tuple(load), wait_cost, False, Violation.DEVIATION, nd.request_id)
        t_prev = t
        w_prev = w
        prev = nd

    if t_prev > vehicle.shift_end:
        return Schedule(tuple(arrival), tuple(load), wait_cost, False, Violation.SHIFT_END, None)
    return Schedule(tuple(arrival), tuple(load), wait_cost, True)


def wait_cost_lower_bound(vehicle: VehicleState, request: Request, matrix: TravelTimeMatrix) -> int:
    """Least wait the request can incur on this vehicle: straight-line drive
    from the departing stop, clamped at zero when the release is still ahead."""
    raw = vehicle.depart_time + matrix.travel(vehicle.depart_stop, request.origin) - request.e
    return max(0, raw)

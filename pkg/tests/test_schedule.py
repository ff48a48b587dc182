import random

import pytest

from ridedispatch.model import DeviationPolicy, OnboardRider, Request, VehicleState
from ridedispatch.schedule import (
    NodeKind,
    RouteStructureError,
    Violation,
    build_route,
    dropoff_node,
    onboard_dropoff_node,
    pickup_node,
    schedule_route,
    wait_cost_lower_bound,
)

from helpers import matrix_from_points, random_micro_problem, random_feasible_route

POLICY = DeviationPolicy(1.5, 240)


def test_empty_route_is_identity():
    m = matrix_from_points([(0, 0), (100, 0)])
    v = VehicleState(0, 0, depart_time=77)
    sched = schedule_route(v, build_route(v, ()), {}, m, POLICY)
    assert sched.feasible
    assert sched.arrival[-1] == 77
    assert sched.wait_cost == 0


def test_single_request_arithmetic():
    # depart->origin 120s, origin->dest 300s on a line
    m = matrix_from_points([(0, 0), (120, 0), (420, 0)])
    v = VehicleState(0, 0, depart_time=0)
    req = Request(1, e=60, origin=1, dest=2, q=1, t_short=300)
    route = build_route(v, (pickup_node(req), dropoff_node(req)))
    sched = schedule_route(v, route, {1: req}, m, POLICY)
    assert sched.feasible
    assert sched.arrival[1] == 120
    assert sched.wait_cost == 60
    assert sched.arrival[2] == 420


def test_capacity_breach():
    m = matrix_from_points([(0, 0), (10, 0), (20, 0)])
    rider = OnboardRider(9, picked_up_at=0, dest=2, q=1, t_short=20)
    v = VehicleState(0, 0, 0, onboard=(rider,), capacity=5)
    req = Request(1, 0, 1, 2, q=5, t_short=10)
    route = build_route(v, (pickup_node(req), dropoff_node(req), onboard_dropoff_node(rider)))
    sched = schedule_route(v, route, {1: req}, m, POLICY)
    assert not sched.feasible
    assert sched.violation is Violation.CAPACITY
    assert sched.violating_request == 1


def test_interleaved_deviation_breach():
    # Rider 1 goes (0,0)->(100,0) directly 100s; detouring through rider 2's
    # origin (50,400) makes the ride 900s, far over max(150, 340).
    m = matrix_from_points([(0, 0), (50, 400), (100, 0), (50, 800)])
    v = VehicleState(0, 0, 0)
    r1 = Request(1, 0, origin=0, dest=2, q=1, t_short=100)
    r2 = Request(2, 0, origin=1, dest=3, q=1, t_short=400)
    reqs = {1: r1, 2: r2}
    route = build_route(v, (pickup_node(r1), pickup_node(r2), dropoff_node(r1), dropoff_node(r2)))
    sched = schedule_route(v, route, reqs, m, POLICY)
    # hand evaluation: u(o1)=0, u(o2)=450, u(d1)=900 -> elapsed 900 > 340
    assert not sched.feasible
    assert sched.violation is Violation.DEVIATION
    assert sched.violating_request == 1
    # the other interleaving is fine: d1 first, then rider 2 direct
    ok = build_route(v, (pickup_node(r1), dropoff_node(r1), pickup_node(r2), dropoff_node(r2)))
    assert schedule_route(v, ok, reqs, m, POLICY).feasible


def test_shift_end_violation():
    m = matrix_from_points([(0, 0), (500, 0)])
    v = VehicleState(0, 0, 0, shift_end=400)
    req = Request(1, 0, 0, 1, 1, 500)
    route = build_route(v, (pickup_node(req), dropoff_node(req)))
    sched = schedule_route(v, route, {1: req}, m, DeviationPolicy(2.0, 600))
    assert not sched.feasible
    assert sched.violation is Violation.SHIFT_END


def test_onboard_rider_deviation_uses_pickup_history():
    m = matrix_from_points([(0, 0), (300, 0)])
    rider = OnboardRider(5, picked_up_at=-600, dest=1, q=1, t_short=100)
    v = VehicleState(0, 0, 0, onboard=(rider,))
    route = build_route(v, (onboard_dropoff_node(rider),))
    sched = schedule_route(v, route, {}, m, DeviationPolicy(1.5, 240))
    # dropoff at 300, ride time 900 > max(150, 340)
    assert not sched.feasible
    assert sched.violation is Violation.DEVIATION
    assert sched.violating_request == 5


class TestStructure:
    def setup_method(self):
        self.m = matrix_from_points([(0, 0), (10, 0), (20, 0)])
        self.req = Request(1, 0, 1, 2, 1, 10)
        self.v = VehicleState(0, 0, 0)

    def test_dropoff_before_pickup(self):
        route = build_route(self.v, (dropoff_node(self.req), pickup_node(self.req)))
        with pytest.raises(RouteStructureError, match="before pickup"):
            schedule_route(self.v, route, {1: self.req}, self.m, POLICY)

    def test_missing_dropoff(self):
        route = build_route(self.v, (pickup_node(self.req),))
        with pytest.raises(RouteStructureError, match="unmatched"):
            schedule_route(self.v, route, {1: self.req}, self.m, POLICY)

    def test_missing_owed_dropoff(self):
        rider = OnboardRider(7, 0, 2, 1, 20)
        v = VehicleState(0, 0, 0, onboard=(rider,))
        route = build_route(v, ())
        with pytest.raises(RouteStructureError, match="owed"):
            schedule_route(v, route, {}, self.m, POLICY)

    def test_foreign_onboard_dropoff(self):
        rider = OnboardRider(7, 0, 2, 1, 20)
        route = build_route(self.v, (onboard_dropoff_node(rider),))
        with pytest.raises(RouteStructureError, match="not onboard"):
            schedule_route(self.v, route, {}, self.m, POLICY)


class TestWaitCostLowerBound:
    def test_direct_formula(self):
        m = matrix_from_points([(0, 0), (50, 0)])
        v = VehicleState(0, 0, depart_time=100)
        assert wait_cost_lower_bound(v, Request(1, 0, 1, 0, 1, 50), m) == 150

    def test_clamped_when_release_ahead(self):
        m = matrix_from_points([(0, 0), (30, 0)])
        v = VehicleState(0, 0, 0)
        assert wait_cost_lower_bound(v, Request(1, 100, 1, 0, 1, 30), m) == 0

    def test_colocated(self):
        m = matrix_from_points([(0, 0)])
        v = VehicleState(0, 0, 0)
        assert wait_cost_lower_bound(v, Request(1, 0, 0, 0, 1, 0), m) == 0


class TestProperties:
    def test_depart_delay_never_reduces_wait_or_restores_feasibility(self):
        hits = 0
        for seed in range(60):
            prob = random_micro_problem(seed)
            v = prob.vehicles[0]
            got = random_feasible_route(prob, v, seed * 17 + 1)
            if got is None:
                continue
            route, sched = got
            hits += 1
            for delay in (1, 30, 300):
                dv = VehicleState(v.id, v.depart_stop, v.depart_time + delay, v.onboard, v.capacity, v.shift_start, v.shift_end)
                droute = build_route(dv, route.interior)
                dsched = schedule_route(dv, droute, prob.request_map(), prob.matrix, prob.policy)
                if dsched.feasible:
                    assert dsched.wait_cost >= sched.wait_cost
        assert hits >= 20

    def test_infeasible_deviation_stays_infeasible_under_delay(self):
        m = matrix_from_points([(0, 0), (50, 400), (100, 0), (50, 800)])
        r1 = Request(1, 0, 0, 2, 1, 100)
        r2 = Request(2, 0, 1, 3, 1, 400)
        for delay in (0, 10, 500):
            v = VehicleState(0, 0, delay)
            route = build_route(v, (pickup_node(r1), pickup_node(r2), dropoff_node(r1), dropoff_node(r2)))
            sched = schedule_route(v, route, {1: r1, 2: r2}, m, POLICY)
            assert not sched.feasible and sched.violation is Violation.DEVIATION

    def test_removing_served_pair_keeps_feasibility_and_arrivals(self):
        rng = random.Random(11)
        checked = 0
        for seed in range(80):
            prob = random_micro_problem(seed)
            v = prob.vehicles[0]
            got = random_feasible_route(prob, v, seed * 31 + 5, max_requests=3)
            if got is None:
                continue
            route, sched = got
            served = sorted(route.served())
            if not served:
                continue
            victim = rng.choice(served)
            kept = tuple(
                nd for nd in route.interior
                if not (nd.request_id == victim and nd.kind in (NodeKind.PICKUP, NodeKind.DROPOFF))
            )
            shorter = build_route(v, kept)
            ssched = schedule_route(v, shorter, prob.request_map(), prob.matrix, prob.policy)
            assert ssched.feasible, "dropping a served pair must stay feasible"
            old_times = {id(nd): t for nd, t in zip(route.nodes, sched.arrival)}
            for nd, t in zip(shorter.nodes[1:-1], ssched.arrival[1:-1]):
                assert t <= old_times[id(nd)], "removal must not delay anyone"
            checked += 1
        assert checked >= 20

    def test_wait_cost_counts_only_new_pickups(self):
        m = matrix_from_points([(0, 0), (40, 0), (80, 0)])
        rider = OnboardRider(9, picked_up_at=0, dest=2, q=1, t_short=80)
        v = VehicleState(0, 0, depart_time=500, onboard=(rider,))
        req = Request(1, 0, 1, 2, 1, 40)
        route = build_route(v, (pickup_node(req), onboard_dropoff_node(rider), dropoff_node(req)))
        sched = schedule_route(v, route, {1: req}, m, DeviationPolicy(1.5, 2000))
        assert sched.feasible
        assert sched.wait_cost == 540  # rider 9 contributes nothing

"""Shared builders for tests: metric matrices from planar points, random
micro instances, and random precedence-valid routes."""

import random

from ridedispatch.model import (
    DeviationPolicy,
    Request,
    StaticProblem,
    TravelTimeMatrix,
    VehicleState,
)
from ridedispatch.schedule import build_route, dropoff_node, onboard_dropoff_node, pickup_node


def matrix_from_points(points, validate=True) -> TravelTimeMatrix:
    """City-block travel times between planar points; metric by construction."""
    n = len(points)
    t = [[abs(points[i][0] - points[j][0]) + abs(points[i][1] - points[j][1]) for j in range(n)] for i in range(n)]
    return TravelTimeMatrix(t, validate=validate)


def random_micro_problem(
    seed: int,
    n_vehicles=(2, 3),
    n_requests=(3, 5),
    n_stops=(6, 8),
    delta=420.0,
    policy=DeviationPolicy(1.5, 240),
    capacity=5,
):
    """A seeded micro instance on a random point cloud, empty vehicles."""
    rng = random.Random(seed)
    nv = rng.randint(*n_vehicles)
    nr = rng.randint(*n_requests)
    ns = rng.randint(*n_stops)
    points = [(rng.randint(0, 60) * 10, rng.randint(0, 60) * 10) for _ in range(ns)]
    matrix = matrix_from_points(points)
    requests = []
    for i in range(nr):
        o = rng.randrange(ns)
        d = rng.randrange(ns)
        requests.append(Request(i, rng.randint(0, 120), o, d, rng.randint(1, 3), matrix.travel(o, d)))
    vehicles = tuple(
        VehicleState(v, rng.randrange(ns), rng.randint(0, 60), capacity=capacity) for v in range(nv)
    )
    penalties = {r.id: delta for r in requests}
    return StaticProblem(vehicles, tuple(requests), penalties, matrix, policy)


def random_feasible_route(problem: StaticProblem, vehicle: VehicleState, seed: int, max_requests=3):
    """A random precedence-valid feasible route on the vehicle, or None."""
    from ridedispatch.schedule import schedule_route

    rng = random.Random(seed)
    reqs = list(problem.requests)
    rng.shuffle(reqs)
    chosen = reqs[: rng.randint(1, min(max_requests, len(reqs)))]
    interior = [onboard_dropoff_node(r) for r in vehicle.onboard]
    for r in chosen:
        i = rng.randint(0, len(interior))
        j = rng.randint(i, len(interior))
        interior = interior[:i] + [pickup_node(r)] + interior[i:j] + [dropoff_node(r)] + interior[j:]
    route = build_route(vehicle, tuple(interior))
    sched = schedule_route(vehicle, route, problem.request_map(), problem.matrix, problem.policy)
    if not sched.feasible:
        return None
    return route, sched

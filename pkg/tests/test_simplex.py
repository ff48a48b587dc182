import numpy as np
import pytest
from scipy.optimize import linprog

from ridedispatch.simplex import INFEASIBLE, OPTIMAL, UNBOUNDED, solve_lp


def scipy_solve(c, A, b):
    return linprog(c, A_eq=A, b_eq=b, bounds=[(0, None)] * len(c), method="highs")


def test_tiny_known_lp():
    # min -x - y  s.t. x + y + s = 4, x + 2y + t = 6
    c = np.array([-1.0, -1.0, 0.0, 0.0])
    A = np.array([[1.0, 1.0, 1.0, 0.0], [1.0, 2.0, 0.0, 1.0]])
    b = np.array([4.0, 6.0])
    res = solve_lp(c, A, b)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(-4.0)


def test_infeasible_detected():
    # x + y = 1 and x + y = 3 cannot both hold
    c = np.array([1.0, 1.0])
    A = np.array([[1.0, 1.0], [1.0, 1.0]])
    b = np.array([1.0, 3.0])
    assert solve_lp(c, A, b).status == INFEASIBLE


def test_unbounded_detected():
    # min -x s.t. x - y = 1: x can grow forever with y
    c = np.array([-1.0, 0.0])
    A = np.array([[1.0, -1.0]])
    b = np.array([1.0])
    assert solve_lp(c, A, b).status == UNBOUNDED


def test_degenerate_cover_lp():
    # Highly degenerate set-partitioning shape; must terminate and agree.
    A = np.array(
        [
            [1.0, 1.0, 0.0, 1.0, 0.0],
            [1.0, 0.0, 1.0, 0.0, 0.0],
            [0.0, 1.0, 1.0, 0.0, 1.0],
        ]
    )
    c = np.array([2.0, 3.0, 4.0, 10.0, 10.0])
    b = np.ones(3)
    res = solve_lp(c, A, b)
    ref = scipy_solve(c, A, b)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(ref.fun, abs=1e-9)


def test_negative_rhs_rows_handled():
    # -x - y = -2 is x + y = 2 with a flipped dual
    c = np.array([1.0, 2.0])
    A = np.array([[-1.0, -1.0]])
    b = np.array([-2.0])
    res = solve_lp(c, A, b)
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(2.0)
    # duals must price against the original row: c - A'y >= 0
    assert (c - A.T @ res.duals >= -1e-9).all()


@pytest.mark.parametrize("seed", range(30))
def test_random_lps_match_scipy(seed):
    rng = np.random.default_rng(seed)
    m = rng.integers(2, 7)
    n = rng.integers(m, 14)
    A = rng.integers(0, 2, size=(m, n)).astype(float)
    A[:, :m] += np.eye(m)  # keep feasibility likely
    c = rng.uniform(0, 10, n)
    b = rng.uniform(1, 5, m)
    res = solve_lp(c, A, b)
    ref = scipy_solve(c, A, b)
    if not ref.success:
        assert res.status != OPTIMAL
        return
    assert res.status == OPTIMAL
    assert res.objective == pytest.approx(ref.fun, abs=1e-7)
    # primal feasibility and optimality conditions of our solution
    assert np.allclose(A @ res.x, b, atol=1e-8)
    assert (res.x >= -1e-9).all()
    # dual feasibility and strong duality certify our duals independently
    assert (c - A.T @ res.duals >= -1e-7).all()
    assert res.duals @ b == pytest.approx(res.objective, abs=1e-7)


@pytest.mark.parametrize("seed", range(10))
def test_random_infeasible_lps(seed):
    rng = np.random.default_rng(100 + seed)
    n = 4
    A = np.vstack([np.ones(n), np.ones(n)])
    b = np.array([1.0, 1.0 + rng.uniform(0.5, 3.0)])
    res = solve_lp(rng.uniform(0, 1, n), A, b)
    assert res.status == INFEASIBLE

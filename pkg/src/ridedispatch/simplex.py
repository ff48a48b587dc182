"""Dense two-phase simplex for small equality-form LPs:

    min c'x   s.t.   A x = b,  x >= 0

Returns the primal optimum together with one optimal dual vector per row.
Master instances here are tiny (rows = open requests + vehicles), so a
dense tableau with Dantzig pricing and a Bland anti-cycling fallback is
plenty, and it keeps the engine self-contained instead of depending on an
external solver. Callers that want a different backend can pass any
function with the same signature wherever ``solve_lp`` is accepted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"

# Consecutive degenerate pivots tolerated before switching from Dantzig
# pricing to Bland's rule for guaranteed termination.
_DEGENERATE_LIMIT = 40


@dataclass
class LPResult:
    status: str
    x: Optional[np.ndarray] = None
    objective: Optional[float] = None
    duals: Optional[np.ndarray] = None  # one per row of A


def _pivot_until_optimal(T, zrow, basis, banned, tol, max_iter):
    """Run primal simplex pivots in place. ``banned`` columns never enter."""
    m, width = T.shape
    ncols = width - 1
    bland = False
    degenerate_run = 0
    for _ in range(max_iter):
        reduced = zrow[:ncols]
        cand = np.flatnonzero((reduced < -tol) & ~banned)
        if cand.size == 0:
            return OPTIMAL
        j = cand[0] if bland else cand[np.argmin(reduced[cand])]
        col = T[:, j]
        pos = np.flatnonzero(col > tol)
        if pos.size == 0:
            return UNBOUNDED
        ratios = T[pos, -1] / col[pos]
        rmin = ratios.min()
        ties = pos[ratios <= rmin + tol * (1.0 + abs(rmin))]
        r = ties[np.argmin(basis[ties])]
        if rmin <= tol:
            degenerate_run += 1
            if degenerate_run > _DEGENERATE_LIMIT:
                bland = True
        else:
            degenerate_run = 0
        piv_col = T[:, j].copy()
        prow = T[r] / T[r, j]
        T -= np.outer(piv_col, prow)
        T[r] = prow
        zrow -= zrow[j] * prow
        basis[r] = j
    raise RuntimeError("simplex iteration limit exceeded")


def _cost_row(cost, T, basis):
    """Reduced-cost row (with negated objective in the last slot) for the
    current basis."""
    zrow = np.concatenate([cost, [0.0]])
    for i, bi in enumerate(basis):
        cb = cost[bi]
        if cb != 0.0:
            zrow -= cb * T[i]
    return zrow


def solve_lp(c, A, b, tol: float = 1e-9, max_iter: int = 100000) -> LPResult:
    """Two-phase dense simplex; see module docstring for the problem form."""
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    c = np.array(c, dtype=float)
    if A.ndim != 2:
        raise ValueError("A must be a matrix")
    m, n = A.shape
    if b.shape != (m,) or c.shape != (n,):
        raise ValueError("shape mismatch between c, A, b")

    flipped = b < 0
    if flipped.any():
        A[flipped] *= -1.0
        b[flipped] *= -1.0

    # Tableau columns: n originals, m artificials, rhs.
    T = np.zeros((m, n + m + 1))
    T[:, :n] = A
    T[:, n : n + m] = np.eye(m)
    T[:, -1] = b
    basis = np.arange(n, n + m)

    # Phase 1: minimize the artificial total.
    cost1 = np.zeros(n + m)
    cost1[n:] = 1.0
    zrow = _cost_row(cost1, T, basis)
    banned = np.zeros(n + m, dtype=bool)
    status = _pivot_until_optimal(T, zrow, basis, banned, tol, max_iter)
    if status != OPTIMAL:
        raise RuntimeError("phase 1 cannot be unbounded")
    if -zrow[-1] > 1e-7 * (1.0 + abs(b).max()):
        return LPResult(INFEASIBLE)

    # Drive leftover artificials out of the basis where the row allows it;
    # rows that do not are redundant and simply keep a zero-valued artificial.
    for i in range(m):
        if basis[i] >= n:
            row = T[i, :n]
            pivots = np.flatnonzero(np.abs(row) > tol)
            if pivots.size:
                j = pivots[0]
                piv_col = T[:, j].copy()
                prow = T[i] / T[i, j]
                T -= np.outer(piv_col, prow)
                T[i] = prow
                basis[i] = j

    # Phase 2 on the real objective; artificials may never re-enter.
    cost2 = np.concatenate([c, np.zeros(m)])
    zrow = _cost_row(cost2, T, basis)
    banned = np.zeros(n + m, dtype=bool)
    banned[n:] = True
    status = _pivot_until_optimal(T, zrow, basis, banned, tol, max_iter)
    if status == UNBOUNDED:
        return LPResult(UNBOUNDED)

    x = np.zeros(n)
    for i, bi in enumerate(basis):
        if bi < n:
            x[bi] = T[i, -1]

    # Duals from the final basis: solve B' y = c_B against the (row-flipped)
    # system, then undo the row flips.
    B = np.empty((m, m))
    cb = np.empty(m)
    for i, bi in enumerate(basis):
        if bi < n:
            B[:, i] = A[:, bi]
            cb[i] = c[bi]
        else:
            B[:, i] = 0.0
            B[bi - n, i] = 1.0
            cb[i] = 0.0
    duals = np.linalg.solve(B.T, cb)
    duals[flipped] *= -1.0

    return LPResult(OPTIMAL, x=x, objective=float(c @ x), duals=duals)

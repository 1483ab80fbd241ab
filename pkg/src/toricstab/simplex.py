"""Dense revised simplex for the toolkit's small deterministic linear programs.

Problems here have at most a few thousand variables, and byte-stable results
across runs matter more than speed, so the solver is a dense two-phase
revised simplex: Dantzig pricing with a permanent switch to Bland's rule when
the objective stalls (anti-cycling), lowest-index tie-breaking everywhere,
and periodic refactorization of the basis inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LPInfeasible, LPUnbounded, NotConverged

__all__ = ["LPResult", "solve_lp"]

_PIVOT_TOL = 1e-10
_COST_TOL = 1e-9
_STALL_LIMIT = 200
_REFRESH_EVERY = 64


@dataclass
class LPResult:
    x: np.ndarray
    fun: float
    status: str          # "optimal"
    iterations: int
    basis: np.ndarray


def solve_lp(c, A_ub=None, b_ub=None, A_eq=None, b_eq=None,
             maxiter: int | None = None) -> LPResult:
    """Minimize c.x subject to A_ub x <= b_ub, A_eq x = b_eq, x >= 0.

    Raises LPInfeasible / LPUnbounded / NotConverged.
    """
    c = np.asarray(c, dtype=float)
    n = c.size
    rows = []
    rhs = []
    n_slack = 0
    if A_ub is not None and len(A_ub):
        A_ub = np.atleast_2d(np.asarray(A_ub, dtype=float))
        b_ub = np.asarray(b_ub, dtype=float)
        n_slack = A_ub.shape[0]
        rows.append(np.hstack([A_ub, np.eye(n_slack)]))
        rhs.append(b_ub)
    if A_eq is not None and len(A_eq):
        A_eq = np.atleast_2d(np.asarray(A_eq, dtype=float))
        b_eq = np.asarray(b_eq, dtype=float)
        pad = np.zeros((A_eq.shape[0], n_slack))
        rows.append(np.hstack([A_eq, pad]))
        rhs.append(b_eq)
    if not rows:
        if np.any(c < -_COST_TOL):
            raise LPUnbounded("no constraints and negative cost direction")
        return LPResult(np.zeros(n), 0.0, "optimal", 0, np.array([], dtype=int))

    width = n + n_slack
    A = np.vstack([np.hstack([r, np.zeros((r.shape[0], width - r.shape[1]))]) for r in rows])
    b = np.concatenate(rhs).astype(float)
    m = A.shape[0]
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0

    full_c = np.concatenate([c, np.zeros(n_slack)])
    if maxiter is None:
        maxiter = 50 * (m + width) + 2000

    # phase 1: artificial identity basis
    A1 = np.hstack([A, np.eye(m)])
    c1 = np.concatenate([np.zeros(width), np.ones(m)])
    basis = np.arange(width, width + m)
    basis, B_inv, obj1, it1 = _iterate(A1, b, c1, basis, maxiter)
    if obj1 > 1e-7 * max(1.0, np.max(np.abs(b)) if m else 1.0):
        raise LPInfeasible(f"phase-1 objective {obj1:.3e} > 0")

    basis, B_inv, A, b, keep = _purge_artificials(A1, b, basis, B_inv, width)

    basis, B_inv, obj, it2 = _iterate(A, b, full_c[:A.shape[1]], basis, maxiter)
    x_full = np.zeros(A.shape[1])
    x_full[basis] = B_inv @ b
    x = x_full[:n]
    return LPResult(x, float(full_c[:A.shape[1]] @ x_full), "optimal", it1 + it2, basis)


def _iterate(A, b, c, basis, maxiter):
    m, N = A.shape
    basis = np.array(basis, dtype=int)
    B_inv = _refactor(A, basis)
    bland = False
    stall = 0
    best = np.inf
    it = 0
    while True:
        if it and it % _REFRESH_EVERY == 0:
            B_inv = _refactor(A, basis)
        x_B = B_inv @ b
        obj = float(c[basis] @ x_B)
        if obj < best - 1e-13 * (1.0 + abs(best)):
            best = obj
            stall = 0
        else:
            stall += 1
            if stall > _STALL_LIMIT:
                bland = True
        y = c[basis] @ B_inv
        reduced = c - y @ A
        in_basis = np.zeros(N, dtype=bool)
        in_basis[basis] = True
        candidates = np.flatnonzero(~in_basis & (reduced < -_COST_TOL))
        if candidates.size == 0:
            return basis, B_inv, obj, it
        if bland:
            enter = int(candidates[0])
        else:
            enter = int(candidates[np.argmin(reduced[candidates])])
        d = B_inv @ A[:, enter]
        pos = d > _PIVOT_TOL
        if not np.any(pos):
            raise LPUnbounded("unbounded ray in simplex iteration")
        ratios = np.full(m, np.inf)
        ratios[pos] = np.maximum(x_B[pos], 0.0) / d[pos]
        rmin = ratios.min()
        ties = np.flatnonzero(ratios <= rmin + 1e-10 * (1.0 + abs(rmin)))
        if ties.size > 1:
            # lexicographic tie-break on successive B_inv columns (anti-cycling)
            for col in range(m):
                vals = B_inv[ties, col] / d[ties]
                vmin = vals.min()
                keep = vals <= vmin + 1e-12 * (1.0 + abs(vmin))
                ties = ties[keep]
                if ties.size == 1:
                    break
        leave_row = int(ties[np.argmin(basis[ties])])  # lowest variable index
        # rank-one pivot update of B_inv
        piv = d[leave_row]
        r = B_inv[leave_row] / piv
        B_inv = B_inv - np.outer(d, r)
        B_inv[leave_row] = r
        basis[leave_row] = enter
        it += 1
        if it > maxiter:
            raise NotConverged(f"simplex exceeded {maxiter} iterations")


def _refactor(A, basis):
    B = A[:, basis]
    try:
        return np.linalg.inv(B)
    except np.linalg.LinAlgError:
        return np.linalg.pinv(B)


def _purge_artificials(A1, b, basis, B_inv, width):
    """Pivot artificial columns out of the basis; drop redundant rows."""
    m = A1.shape[0]
    keep_rows = np.ones(m, dtype=bool)
    basis = basis.copy()
    for row in range(m):
        if basis[row] < width:
            continue
        tab_row = B_inv[row] @ A1[:, :width]
        pivots = np.flatnonzero(np.abs(tab_row) > 1e-8)
        pivots = [j for j in pivots if j not in set(basis.tolist())]
        if pivots:
            enter = int(pivots[0])
            d = B_inv @ A1[:, enter]
            piv = d[row]
            r = B_inv[row] / piv
            B_inv = B_inv - np.outer(d, r)
            B_inv[row] = r
            basis[row] = enter
        else:
            keep_rows[row] = False  # redundant constraint
    A = A1[:, :width]
    if not np.all(keep_rows):
        A = A[keep_rows]
        b = b[keep_rows]
        basis = basis[keep_rows]
        B_inv = _refactor(A, basis)
    else:
        B_inv = _refactor(A, basis)
    return basis, B_inv, A, b, keep_rows

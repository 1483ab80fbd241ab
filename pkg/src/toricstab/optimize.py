"""Small deterministic optimization kernels.

Contains the pieces the convex-analysis and destabilizer modules share:
exact Euclidean projection onto a polytope (active-set enumeration, valid for
the low dimensions in scope), batched projected gradient ascent for concave
maximization over a polytope, the minimum-norm point of a finite point set,
and Dykstra's alternating projection for intersections of half-spaces with an
ellipsoid.
"""

from __future__ import annotations

import itertools

import numpy as np

from .errors import NotConverged

__all__ = [
    "project_to_polytope",
    "projected_concave_ascent",
    "min_norm_point",
    "dykstra_project",
    "project_ellipsoid",
    "HalfspaceBlock",
    "Orthant",
    "Ellipsoid",
    "split_disjoint_blocks",
]


def project_to_polytope(polytope, points, tol: float = 1e-12) -> np.ndarray:
    """Euclidean projection of ``points`` onto the closed polytope.

    Enumerates active facet subsets of size <= n and checks KKT signs, which
    is exact and deterministic for the handful of facets in scope.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = polytope.dim
    A = polytope.normals.astype(float)
    lam = polytope.offsets
    out = pts.copy()
    vals = pts @ A.T - lam
    inside = (vals >= -tol).all(axis=1)
    todo = np.flatnonzero(~inside)
    if todo.size == 0:
        return out[0] if np.asarray(points).ndim == 1 else out
    best_d2 = np.full(pts.shape[0], np.inf)
    best = np.zeros_like(pts)
    for size in range(1, n + 1):
        for subset in itertools.combinations(range(A.shape[0]), size):
            As = A[list(subset)]
            G = As @ As.T
            try:
                G_inv = np.linalg.inv(G)
            except np.linalg.LinAlgError:
                continue
            # y = p + As^T nu with As y = lam_s  =>  nu = G^{-1}(lam_s - As p)
            resid = lam[list(subset)] - pts[todo] @ As.T
            nu = resid @ G_inv.T
            y = pts[todo] + nu @ As
            feas = ((y @ A.T - lam) >= -1e-9).all(axis=1)
            kkt = (nu >= -1e-9).all(axis=1)
            ok = feas & kkt
            d2 = ((y - pts[todo]) ** 2).sum(axis=1)
            improve = ok & (d2 < best_d2[todo])
            rows = todo[improve]
            best_d2[rows] = d2[improve]
            best[rows] = y[improve]
    if not np.all(np.isfinite(best_d2[todo])):
        # fall back to the nearest vertex (cannot happen for valid polytopes)
        for r in todo[~np.isfinite(best_d2[todo])]:
            d = ((polytope.vertices - pts[r]) ** 2).sum(axis=1)
            best[r] = polytope.vertices[np.argmin(d)]
    out[todo] = best[todo]
    return out[0] if np.asarray(points).ndim == 1 else out


def projected_concave_ascent(value, grad, polytope, starts,
                             tol: float = 1e-10, maxiter: int = 2000,
                             armijo: float = 1e-4):
    """Maximize a batch of concave objectives over the polytope.

    ``value(points, members)`` -> (K,) and ``grad(points, members)`` -> (K, n)
    evaluate the objectives of the given batch members at the given points.
    Projected gradient steps with Armijo backtracking; a point is converged
    when its projected gradient map (unit step) moves less than ``tol``.

    Returns (points, values, converged_mask, iterations).
    """
    x = np.atleast_2d(np.asarray(starts, dtype=float)).copy()
    K = x.shape[0]
    members = np.arange(K)
    f = value(x, members)
    step = np.ones(K)
    active = np.ones(K, dtype=bool)
    iters = 0
    for iters in range(1, maxiter + 1):
        if not active.any():
            break
        g = grad(x, members)
        # convergence: projected gradient map at unit step
        probe = project_to_polytope(polytope, x + g)
        move = np.linalg.norm(probe - x, axis=1)
        newly_done = active & (move <= tol)
        active &= ~newly_done
        if not active.any():
            break
        idx = np.flatnonzero(active)
        step[idx] = np.minimum(step[idx] * 4.0, 1e6)  # allow growth between iters
        for _ in range(60):
            if idx.size == 0:
                break
            cand = project_to_polytope(polytope, x[idx] + step[idx, None] * g[idx])
            fc = value(cand, idx)
            gain = fc - f[idx]
            need = armijo * np.einsum("ij,ij->i", g[idx], cand - x[idx])
            ok = np.isfinite(fc) & (gain >= need - 1e-15)
            accepted = idx[ok]
            x[accepted] = cand[ok]
            f[accepted] = fc[ok]
            idx = idx[~ok]
            step[idx] *= 0.5
    return x, f, ~active, iters


def min_norm_point(points, tol: float = 1e-12) -> np.ndarray:
    """Minimum-Euclidean-norm point of the convex hull of ``points``.

    Enumerates support subsets up to size n+1 (Caratheodory); exact for the
    small active-gradient sets that arise from subdifferentials.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    m, n = P.shape
    if m == 1:
        return P[0].copy()
    best = None
    best_norm = np.inf
    for size in range(1, min(m, n + 1) + 1):
        for subset in itertools.combinations(range(m), size):
            S = P[list(subset)]
            # minimize ||S^T w||^2 over the simplex; solve the equality-KKT
            # system on the affine hull, then check nonnegativity
            G = S @ S.T
            ones = np.ones(size)
            M = np.zeros((size + 1, size + 1))
            M[:size, :size] = G
            M[:size, size] = ones
            M[size, :size] = ones
            rhs = np.zeros(size + 1)
            rhs[size] = 1.0
            try:
                sol = np.linalg.solve(M, rhs)
            except np.linalg.LinAlgError:
                continue
            w = sol[:size]
            if np.any(w < -1e-9):
                continue
            x = w @ S
            nx = float(x @ x)
            # global optimality: <x, p_i> >= ||x||^2 for all i
            if np.all(P @ x >= nx - 1e-9 * (1.0 + nx)) and nx < best_norm - tol:
                best_norm = nx
                best = x
    if best is None:  # numerically degenerate; fall back to the shortest input
        best = P[np.argmin((P ** 2).sum(axis=1))]
    return best


def project_ellipsoid(x, eigvecs, eigvals, radius: float = 1.0,
                      tol: float = 1e-13) -> np.ndarray:
    """Euclidean projection onto {y : y' Q y <= radius^2}.

    ``Q = eigvecs @ diag(eigvals) @ eigvecs.T`` with eigvals >= 0; zero
    eigenvalues leave those directions unconstrained.
    """
    z = eigvecs.T @ x
    q = float(np.sum(eigvals * z * z))
    r2 = radius * radius
    if q <= r2 * (1 + 1e-14):
        return x.copy()
    # solve sum_i lam_i z_i^2 / (1 + t lam_i)^2 = r2 for t > 0 (decreasing in t)
    lo, hi = 0.0, 1.0
    def val(t):
        return float(np.sum(eigvals * z * z / (1.0 + t * eigvals) ** 2))
    while val(hi) > r2:
        hi *= 2.0
        if hi > 1e18:
            raise NotConverged("ellipsoid projection multiplier overflow")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if val(mid) > r2:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * (1.0 + hi):
            break
    t = 0.5 * (lo + hi)
    y = z / (1.0 + t * eigvals)
    return eigvecs @ y


class HalfspaceBlock:
    """A block of half-spaces {rows @ x >= 0} whose rows touch disjoint
    variables, so they project simultaneously in one vectorized step."""

    def __init__(self, rows):
        self.rows = np.atleast_2d(np.asarray(rows, dtype=float))
        self.norm2 = (self.rows ** 2).sum(axis=1)

    def project(self, x):
        viol = np.maximum(-(self.rows @ x), 0.0)
        if not viol.any():
            return x
        return x + self.rows.T @ (viol / self.norm2)

    def violation(self, x):
        return float(np.maximum(-(self.rows @ x), 0.0).max(initial=0.0))


class Orthant:
    """{x >= 0} on a subset of coordinates (all when idx is None)."""

    def __init__(self, idx=None):
        self.idx = idx

    def project(self, x):
        y = x.copy()
        if self.idx is None:
            np.maximum(y, 0.0, out=y)
        else:
            y[self.idx] = np.maximum(y[self.idx], 0.0)
        return y

    def violation(self, x):
        v = x if self.idx is None else x[self.idx]
        return float(np.maximum(-v, 0.0).max(initial=0.0))


class Ellipsoid:
    """{x : x' Q x <= radius^2} via the eigendecomposition of Q (PSD)."""

    def __init__(self, eigvecs, eigvals, radius=1.0):
        self.eigvecs = eigvecs
        self.eigvals = np.maximum(np.asarray(eigvals, dtype=float), 0.0)
        self.radius = float(radius)

    def project(self, x):
        return project_ellipsoid(x, self.eigvecs, self.eigvals, self.radius)

    def violation(self, x):
        z = self.eigvecs.T @ x
        return float(np.sum(self.eigvals * z * z) - self.radius ** 2)


def split_disjoint_blocks(H) -> list:
    """Greedy-color sparse constraint rows into variable-disjoint blocks."""
    import scipy.sparse as sp
    H = sp.csr_matrix(H)
    blocks = []          # list of (set of columns, list of row indices)
    for r in range(H.shape[0]):
        cols = set(H.indices[H.indptr[r]:H.indptr[r + 1]])
        for used, rows in blocks:
            if not (used & cols):
                used |= cols
                rows.append(r)
                break
        else:
            blocks.append((set(cols), [r]))
    return [HalfspaceBlock(H[rows].toarray()) for _, rows in blocks]


def dykstra_project(x0, sets, maxiter: int = 2000, tol: float = 1e-11):
    """Dykstra's alternating projection onto the intersection of ``sets``.

    Each set exposes ``project(x)`` and ``violation(x)``.  Converges for
    closed convex sets with nonempty intersection.
    """
    x = np.asarray(x0, dtype=float).copy()
    increments = [np.zeros_like(x) for _ in sets]
    for _ in range(maxiter):
        max_move = 0.0
        for s, cset in enumerate(sets):
            y = x - increments[s]
            z = cset.project(y)
            increments[s] = z - y
            max_move = max(max_move, float(np.max(np.abs(z - x))))
            x = z
        if max_move <= tol:
            viol = max(cset.violation(x) for cset in sets)
            if viol <= 1e-9:
                break
    return x

"""Optimal destabilizing degenerations.

Minimizes the ratio of the linear stability functional to the filtration
norm over normalized mesh-convex functions: equivalently, the linear
objective L_A(u) over the cone {hinge-convex, u >= 0, u(p_o) = 0} intersected
with the unit ball of the quotient (affine-orthogonal) L2 form, by projected
gradient with Armijo backtracking and Dykstra projection onto the
constraints.  A negative optimum lies on the unit sphere of the quotient
norm, so the optimal value is the ratio W* and the optimizer is the
destabilizer, unique up to scaling on the instances in scope.

On the constraint ball the quotient form agrees with the filtration norm, so
the reported W* re-evaluates independently as w_ratio(u*).  The ray
truncation comparison (the strict decrease of L_A under truncation for
steep-gradient potentials) also lives here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .convexfn import GridConvexFunction, truncate
from .errors import FullCoverage, InfeasibleStart, NotConverged
from .fields import ScalarField
from .functionals import linear_functional, w_ratio
from .geometry import DelzantPolytope, measures
from .mesh import fan_mesh
from .optimize import Ellipsoid, Orthant, dykstra_project, split_disjoint_blocks

__all__ = [
    "DestabilizerResult",
    "TruncationComparison",
    "optimal_destabilizer",
    "uniqueness_check",
    "boundedness_trace",
    "truncation_improvement",
]


@dataclass
class DestabilizerResult:
    found: bool
    w_star: float
    u_star: GridConvexFunction | None
    u_orthogonal: np.ndarray | None      # affine-orthogonal representative values
    norm_record: float                   # quotient norm of u_star after scaling
    objective_log: list
    iterations: int
    fan_level: int
    resolution: float
    seed: int
    w_independent: float | None = None   # w_ratio re-evaluated through functionals

    def to_dict(self) -> dict:
        return {
            "found": self.found,
            "W": self.w_star,
            "norm": self.norm_record,
            "iterations": self.iterations,
            "fan_level": self.fan_level,
            "resolution": self.resolution,
            "seed": self.seed,
            "objective_log": self.objective_log,
            "u_values": None if self.u_star is None else self.u_star.values.tolist(),
            "W_independent": self.w_independent,
        }


def _quotient_form(mesh):
    """Dense quotient mass form: <u,u> minus its affine L2 projection."""
    M = mesh.mass_matrix().toarray()
    V = mesh.moment_rows()                       # (n+1, N): integrals of u*phi
    pts = mesh.vertices
    basis = np.hstack([np.ones((len(pts), 1)), pts])
    G = V @ basis                                # gram of affine basis, exact
    Q = M - V.T @ np.linalg.solve(G, V)
    return 0.5 * (Q + Q.T), V, G


def optimal_destabilizer(polytope: DelzantPolytope, A, resolution: float = 1 / 32,
                         seed: int = 0, maxiter: int = 100000,
                         rel_tol: float = 1e-10,
                         neg_tol: float = 1e-9) -> DestabilizerResult:
    """Minimize L_A over normalized mesh-convex functions with unit
    filtration norm; projected gradient with ball projection.

    Returns ``found=False`` (stable direction at this resolution) when the
    optimum is not negative beyond ``neg_tol``.
    """
    if np.isscalar(A):
        A = ScalarField.constant(polytope.dim, float(A))
    mesh = fan_mesh(polytope, resolution)
    po = mesh.node_index(polytope.p_o)
    if po is None:
        raise ValueError("base point p_o must be a mesh node")
    keep = np.ones(mesh.n_nodes, dtype=bool)
    keep[po] = False

    b = mesh.boundary_load(None)
    c_full = b * 0.0
    c_full += mesh.boundary_load(None) - mesh.interior_load(A)
    c = c_full[keep]

    Qfull, V, G = _quotient_form(mesh)
    Q = Qfull[np.ix_(keep, keep)]
    eigvals, eigvecs = np.linalg.eigh(Q)
    eigvals = np.maximum(eigvals, 0.0)
    H = mesh.hinge_matrix()[:, keep]
    sets = split_disjoint_blocks(H) + [Orthant(), Ellipsoid(eigvecs, eigvals, 1.0)]

    rng = np.random.RandomState(seed)
    x = dykstra_project(rng.rand(keep.sum()) * 0.1, sets, tol=1e-12)
    if max(s.violation(x) for s in sets) > 1e-8:
        raise InfeasibleStart("projection failed to produce a feasible start")

    obj = float(c @ x)
    log = [obj]
    cnorm = float(np.linalg.norm(c))
    step = 1.0 / max(cnorm, 1e-12)
    converged = False
    it = 0
    while it < maxiter:
        it += 1
        y = dykstra_project(x - step * c, sets, tol=1e-12)
        new = float(c @ y)
        if new < obj - 1e-16 * (1.0 + abs(obj)):
            rel = (obj - new) / max(abs(obj), 1e-30)
            x, obj = y, new
            log.append(obj)
            step *= 1.3
            if rel <= rel_tol and it > 3:
                converged = True
                break
        else:
            step *= 0.5
            if step * cnorm < 1e-14:
                converged = True
                break
    if not converged:
        raise NotConverged(f"projected gradient hit the {maxiter}-iteration cap")

    if obj >= -neg_tol:
        return DestabilizerResult(False, float(max(obj, 0.0)), None, None, 0.0,
                                  log, it, mesh.fan_level, resolution, seed)

    q = float(x @ (Q @ x))
    x = x / np.sqrt(q)
    values = np.zeros(mesh.n_nodes)
    values[keep] = x
    w_star = float(c @ x)
    u_star = GridConvexFunction(mesh, values, convex_tol=1e-7, require_convex=False)
    # affine-orthogonal representative: subtract the affine L2 projection
    coef = np.linalg.solve(G, V @ values)
    basis = np.hstack([np.ones((mesh.n_nodes, 1)), mesh.vertices])
    u_perp = values - basis @ coef
    w_ind = w_ratio(polytope, A, u_star)
    return DestabilizerResult(True, w_star, u_star, u_perp, 1.0, log, it,
                              mesh.fan_level, resolution, seed,
                              w_independent=w_ind)


def uniqueness_check(polytope: DelzantPolytope, A, seeds,
                     resolution: float = 1 / 32) -> float:
    """Minimum pairwise L2(dmu) correlation of destabilizers across seeds."""
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("need at least two seeds")
    results = [optimal_destabilizer(polytope, A, resolution, seed=s) for s in seeds]
    if not all(r.found for r in results):
        raise FullCoverage("no destabilizer found; uniqueness is vacuous")
    mesh = results[0].u_star.mesh
    M = mesh.mass_matrix()
    best = 1.0
    for i in range(len(results)):
        for j in range(i + 1, len(results)):
            ui, uj = results[i].u_star.values, results[j].u_star.values
            num = float(ui @ (M @ uj))
            den = float(np.sqrt((ui @ (M @ ui)) * (uj @ (M @ uj))))
            best = min(best, num / den)
    return best


def boundedness_trace(polytope: DelzantPolytope, A, resolutions,
                      seed: int = 0) -> list:
    """Max vertex value of the normalized destabilizer per mesh resolution.

    Empty when the first resolution finds no destabilizer (stable input).
    """
    trace = []
    for res in resolutions:
        r = optimal_destabilizer(polytope, A, res, seed=seed)
        if not r.found:
            return []
        trace.append((res, float(np.abs(r.u_star.values).max())))
    return trace


@dataclass
class TruncationComparison:
    value_full: float
    value_truncated: float
    max_ray_gap: float
    threshold: float
    radial: object

    @property
    def difference(self) -> float:
        return self.value_full - self.value_truncated

    def to_dict(self) -> dict:
        return {"L_full": self.value_full, "L_truncated": self.value_truncated,
                "difference": self.difference, "max_ray_gap": self.max_ray_gap,
                "threshold": self.threshold}


def truncation_improvement(polytope: DelzantPolytope, A, u, h: float,
                           n_rays: int | None = None,
                           resolution: float | None = None) -> TruncationComparison:
    """Compare L_A(u) with L_A(u_h) for a steep-gradient potential.

    Preconditions: the normal image at height h must not cover the polytope
    (otherwise the bounded-gradient case applies and FullCoverage is raised),
    and h must be large enough that the maximal ray gap max(R_e - r_e) is
    below c_o / (2 max|A| max|a_i|); both are checked numerically.
    """
    if np.isscalar(A):
        A = ScalarField.constant(polytope.dim, float(A))
    uh = truncate(u, polytope, h, n_rays=n_rays, resolution=resolution)
    if uh.case1:
        raise FullCoverage(
            "normal image covers the polytope at this height (bounded-gradient case)")
    radial = uh.radial
    gap = float((radial.boundary_radii - radial.radii).max())
    rule = measures(polytope, 16)
    maxA = float(np.abs(np.concatenate([
        A(rule.interior_nodes), A(polytope.vertices)])).max())
    max_norm = float(np.linalg.norm(polytope.normals.astype(float), axis=1).max())
    threshold = polytope.chord_constant / (2.0 * max(maxA, 1e-300) * max_norm)
    if gap > threshold:
        raise ValueError(
            f"ray gap {gap:.3e} above the threshold {threshold:.3e}; increase h")
    L_full = linear_functional(polytope, A, u).value
    L_trunc = linear_functional(polytope, A, uh).value
    return TruncationComparison(L_full, L_trunc, gap, threshold, radial)

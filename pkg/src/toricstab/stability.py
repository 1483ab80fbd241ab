"""Desk-scale stability decisions.

The uniform margin is the minimum of the linear functional over normalized
convex piecewise-linear functions on a fixed triangulation, computed as a
linear program: hinge-convexity rows, nonnegativity, vanishing at the base
point, and unit weighted boundary integral.  Restricting to mesh functions
shrinks the admissible family, so the computed margin upper-bounds the true
one and decreases under nested refinement (logged in the report).

Also here: single-witness checks for rational PL degenerations, the rounding
scan that tracks the functional along the lattice approximants of a convex
function, the continuity-path interpolation, and the bundle curvature
bookkeeping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .convexfn import (GridConvexFunction, PLConvexFunction,
                       round_to_filtration)
from .errors import MeshTooCoarse, TOutOfRange
from .fields import ScalarField
from .functionals import FunctionalReport, linear_functional, default_order
from .geometry import DelzantPolytope
from .mesh import Mesh, fan_mesh
from .simplex import solve_lp

__all__ = [
    "StabilityReport",
    "WitnessReport",
    "KhatScan",
    "stability_margin",
    "check_witness",
    "khat_scan",
    "continuity_path",
    "scalar_curvature_target",
    "scalar_curvature_of",
]


@dataclass
class StabilityReport:
    """Outcome of a margin computation."""

    margin: float
    witness: GridConvexFunction
    verdict: str                    # "uniformly-stable" | "destabilized" | "inconclusive"
    p_o: np.ndarray
    boundary_normalization: float   # weighted boundary integral of the witness
    fan_level: int
    resolution: float
    lp_iterations: int
    refinement_log: list = field(default_factory=list)   # [(fan_level, margin), ...]
    reverified: FunctionalReport | None = None

    def to_dict(self) -> dict:
        return {
            "margin": self.margin,
            "verdict": self.verdict,
            "p_o": self.p_o.tolist(),
            "boundary_normalization": self.boundary_normalization,
            "fan_level": self.fan_level,
            "resolution": self.resolution,
            "lp_iterations": self.lp_iterations,
            "refinement_log": [[int(m), float(v)] for m, v in self.refinement_log],
            "witness_values": self.witness.values.tolist(),
            "reverified": None if self.reverified is None else self.reverified.to_dict(),
        }


def _margin_lp(polytope, A, D, mesh):
    """Set up and solve the margin LP on one mesh; returns (margin, values, iters)."""
    b = mesh.boundary_load(D)
    AD = A if D is None else A * D
    c = b - mesh.interior_load(AD)
    H = mesh.hinge_matrix().toarray()
    po = mesh.node_index(polytope.p_o)
    if po is None:
        raise MeshTooCoarse("base point p_o is not a mesh node; use p_o = center")
    n_bnd = sum(len(fl) for fl in mesh.boundary_faces)
    if polytope.dim >= 2 and n_bnd < polytope.dim + 2:
        raise MeshTooCoarse(f"only {n_bnd} boundary faces; need at least {polytope.dim + 2}")
    keep = np.ones(mesh.n_nodes, dtype=bool)
    keep[po] = False
    res = solve_lp(
        c[keep],
        A_ub=-H[:, keep],
        b_ub=np.zeros(H.shape[0]),
        A_eq=b[keep][None, :],
        b_eq=np.array([1.0]),
    )
    values = np.zeros(mesh.n_nodes)
    values[keep] = res.x
    return float(res.fun), values, res.iterations


def stability_margin(polytope: DelzantPolytope, A, D=None,
                     resolution: float = 1 / 32, log_refinement: bool = True,
                     zero_tol: float = 1e-8) -> StabilityReport:
    """Uniform stability margin over normalized mesh-convex functions.

    Minimizes L_A(u) subject to hinge convexity, u >= 0, u(p_o) = 0, and the
    weighted boundary normalization equal to one.  The optimizer is returned
    as the witness; a destabilized verdict is re-verified by direct quadrature
    at doubled order.
    """
    if np.isscalar(A):
        A = ScalarField.constant(polytope.dim, float(A))
    mesh = fan_mesh(polytope, resolution)
    margin, values, iters = _margin_lp(polytope, A, D, mesh)
    witness = GridConvexFunction(mesh, values, convex_tol=1e-7, require_convex=False)

    refinement_log = [(mesh.fan_level, margin)]
    if log_refinement and mesh.fan_level >= 2:
        coarse = fan_mesh(polytope, m=max(1, mesh.fan_level // 2))
        try:
            m_c, _, _ = _margin_lp(polytope, A, D, coarse)
            refinement_log.insert(0, (coarse.fan_level, m_c))
        except MeshTooCoarse:
            pass

    reverified = None
    if margin < -zero_tol:
        verdict = "destabilized"
        order = 2 * max(default_order(), A.degree + (D.degree if D is not None else 0) + 2)
        reverified = linear_functional(polytope, A, witness, D, order=order)
        if not reverified.value < 0:
            verdict = "inconclusive"
    elif margin > zero_tol:
        verdict = "uniformly-stable"
    else:
        verdict = "inconclusive"
    bnorm = float(mesh.boundary_load(D) @ values)
    return StabilityReport(
        margin=margin,
        witness=witness,
        verdict=verdict,
        p_o=polytope.p_o.copy(),
        boundary_normalization=bnorm,
        fan_level=mesh.fan_level,
        resolution=resolution,
        lp_iterations=iters,
        refinement_log=refinement_log,
        reverified=reverified,
    )


@dataclass
class WitnessReport:
    functional: FunctionalReport
    verdict: str          # "negative" | "zero" | "positive"
    is_affine: bool
    tolerance: float

    def to_dict(self) -> dict:
        return {"functional": self.functional.to_dict(), "verdict": self.verdict,
                "is_affine": self.is_affine, "tolerance": self.tolerance}


def check_witness(polytope: DelzantPolytope, A, u: PLConvexFunction,
                  D=None) -> WitnessReport:
    """Evaluate L_A on one PL degeneration, piecewise exactly, with verdict.

    The zero tolerance is tied to the evaluation's own error estimate rather
    than a fixed epsilon, so near-affine witnesses are not misclassified.
    """
    if not isinstance(u, PLConvexFunction):
        raise TypeError("check_witness expects a PL convex function")
    rep = linear_functional(polytope, A, u, D)
    scale = max(1.0, abs(rep.boundary_term), abs(rep.interior_term))
    tol = max(1e-9 * scale, 10.0 * rep.est_error)
    simplified = u.simplify(polytope)
    is_affine = simplified.n_pieces <= 1
    if rep.value < -tol:
        verdict = "negative"
    elif abs(rep.value) <= tol:
        verdict = "zero"
    else:
        verdict = "positive"
    return WitnessReport(rep, verdict, is_affine, tol)


@dataclass
class KhatScan:
    ks: list
    reports: list                 # FunctionalReport per k
    reference: FunctionalReport   # L_A(u) itself
    gaps: list

    def to_dict(self) -> dict:
        return {"ks": self.ks,
                "values": [r.value for r in self.reports],
                "reference": self.reference.value,
                "gaps": self.gaps}


def khat_scan(polytope: DelzantPolytope, A, u, k_max: int, D=None) -> KhatScan:
    """L_A along the lattice rounding approximants u_k, k = 1..k_max.

    ``u`` may be any convex representation; lattice values are taken from it
    directly so the rounding is exact.  Reports the convergence gap
    |L_A(u_k) - L_A(u)| per k.
    """
    reference = linear_functional(polytope, A, u, D)
    ks, reports, gaps = [], [], []
    for k in range(1, int(k_max) + 1):
        uk = round_to_filtration(u, polytope, k)
        rep = linear_functional(polytope, A, uk, D)
        ks.append(k)
        reports.append(rep)
        gaps.append(abs(rep.value - reference.value))
    return KhatScan(ks, reports, reference, gaps)


def continuity_path(A0: ScalarField, A: ScalarField, lam0: float, lam: float,
                    t: float):
    """Affine interpolation (A_t, lambda_t) between the start and target data."""
    if not 0.0 <= t <= 1.0:
        raise TOutOfRange(f"path parameter {t} outside [0, 1]")
    At = (1.0 - t) * A0 + t * A
    return At, (1.0 - t) * lam0 + t * lam


def scalar_curvature_target(S: ScalarField, h_G: ScalarField) -> ScalarField:
    """Target A = S - h_G for the weighted equation on a bundle."""
    return S - h_G


def scalar_curvature_of(A: ScalarField, h_G: ScalarField) -> ScalarField:
    """Bundle scalar curvature S = A + h_G (inverse of the target map)."""
    return A + h_G

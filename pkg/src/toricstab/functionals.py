"""Stability functionals on the polytope.

The linear functional L_A(u) = int_boundary u D dsigma - int A u D dmu, the
log-det (Mabuchi-type) functional, the filtration norm (L2 distance from the
affine functions), their ratio W, the extremal affine target, and the L1
distance between potentials.

Evaluation is piecewise exact wherever the representation allows: PL sources
are integrated on their active-piece subdivision, grid sources per simplex,
and Guillemin-type symbolic sources through closed-form log integrals.  The
residual quadrature error is estimated by comparing two orders.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .convexfn import (GridConvexFunction, PLConvexFunction,
                       SmoothSymbolicFunction)
from .errors import AffineInput, DegenerateMomentMatrix, NonpositiveWeight, NotStrictlyConvex
from .fields import ScalarField
from .geometry import DelzantPolytope, average_density, measures
from .integrate import (integrate_abs_pl_mesh, integrate_against_log,
                        integrate_poly_over_polygon, pl_pieces_1d,
                        pl_regions_2d, polygon_vertices)
from .mesh import fan_mesh
from .quadrature import simplex_rule

__all__ = [
    "FunctionalReport",
    "linear_functional",
    "mabuchi_functional",
    "mabuchi_scaling_report",
    "filtration_norm",
    "plain_l2_deviation",
    "w_ratio",
    "extremal_affine",
    "d1_distance",
    "balance_residuals",
    "default_order",
]


def default_order() -> int:
    """Default quadrature exactness order; TORICSTAB_QUAD_ORDER overrides."""
    try:
        return max(2, int(os.environ.get("TORICSTAB_QUAD_ORDER", "12")))
    except ValueError:
        return 12


@dataclass(frozen=True)
class FunctionalReport:
    """Boundary and interior parts of a linear functional evaluation."""

    boundary_term: float
    interior_term: float
    quadrature_order: int
    est_error: float

    @property
    def value(self) -> float:
        return self.boundary_term - self.interior_term

    def to_dict(self) -> dict:
        return {
            "boundary_term": self.boundary_term,
            "interior_term": self.interior_term,
            "value": self.value,
            "quadrature_order": self.quadrature_order,
            "est_error": self.est_error,
        }


def _weight_field(polytope, A, D):
    """A*D as a ScalarField (A, D given as ScalarField or scalar)."""
    n = polytope.dim
    if A is None:
        A = ScalarField.constant(n, 1.0)
    elif np.isscalar(A):
        A = ScalarField.constant(n, float(A))
    if D is None:
        return A, None
    if np.isscalar(D):
        D = ScalarField.constant(n, float(D))
    return A, D


def _check_positive_weight(polytope, D, order):
    rule = measures(polytope, max(4, order))
    vals = [D(rule.interior_nodes).min(), D(polytope.vertices).min()]
    if min(vals) <= 0:
        raise NonpositiveWeight("weight must be positive on the closed polytope")


def linear_functional(polytope: DelzantPolytope, A, u, D=None,
                      order: int | None = None) -> FunctionalReport:
    """L_A(u) = int_boundary u D dsigma - int A u D dmu.

    A and D are polynomial fields (D optional, must be positive).  PL and
    grid representations are integrated piecewise exactly; symbolic
    Guillemin-type sources use closed-form log integrals plus quadrature for
    their polynomial part.
    """
    A, D = _weight_field(polytope, A, D)
    if order is None:
        order = max(default_order(), A.degree + (D.degree if D else 0) + 2)
    if D is not None:
        _check_positive_weight(polytope, D, order)
    b1, i1 = _lin_terms(polytope, A, u, D, order)
    b2, i2 = _lin_terms(polytope, A, u, D, order + 4)
    est = abs((b2 - i2) - (b1 - i1))
    return FunctionalReport(b2, i2, order + 4, est)


def _lin_terms(polytope, A, u, D, order):
    AD = A if D is None else A * D
    if isinstance(u, PLConvexFunction):
        return (_pl_boundary(polytope, u, D, order),
                _pl_interior(polytope, u, AD, order))
    if isinstance(u, GridConvexFunction):
        mesh = u.mesh
        b = mesh.boundary_load(D, order=order) @ u.values
        i = mesh.interior_load(AD, order=order) @ u.values
        return b, i
    if isinstance(u, SmoothSymbolicFunction):
        return (_symbolic_boundary(polytope, u, D, order),
                _symbolic_interior(polytope, u, AD, order))
    raise TypeError(f"unsupported representation {type(u)!r}")


# -- PL paths ---------------------------------------------------------------

def _pl_interior(polytope, u, AD, order):
    total = 0.0
    if polytope.dim == 1:
        a, b = float(polytope.vertices.min()), float(polytope.vertices.max())
        for x0, x1, j in pl_pieces_1d(u.slopes[:, 0], u.offsets, a, b):
            piece = ScalarField.affine(1, u.offsets[j], u.slopes[j])
            F = AD * piece
            nodes, w = simplex_rule(np.array([[x0], [x1]]), max(order, F.degree + 1))
            total += float(np.dot(w, F(nodes)))
        return total
    polygon = polygon_vertices(polytope)
    for region, j in pl_regions_2d(u.slopes, u.offsets, polygon):
        piece = ScalarField.affine(2, u.offsets[j], u.slopes[j])
        F = AD * piece
        total += integrate_poly_over_polygon(F, region, order=max(order, F.degree + 1))
    return total


def _pl_boundary(polytope, u, D, order):
    total = 0.0
    if polytope.dim == 1:
        for i in range(polytope.n_facets):
            x = polytope.vertices[polytope.facet_vertices[i][0]]
            dval = 1.0 if D is None else float(D(x))
            total += dval * u(x)
        return total
    for i, cyc in enumerate(polytope.facet_vertices):
        P, Q = polytope.vertices[cyc[0]], polytope.vertices[cyc[1]]
        density = 1.0 / np.linalg.norm(polytope.normals[i].astype(float))
        L = float(np.linalg.norm(Q - P))
        # restrict pieces to the segment: affine in s on [0, 1]
        s_slopes = u.slopes @ (Q - P)
        s_offsets = u.slopes @ P + u.offsets
        for s0, s1, j in pl_pieces_1d(s_slopes, s_offsets, 0.0, 1.0):
            deg = 1 + (D.degree if D is not None else 0)
            nodes, w = simplex_rule(np.array([[s0], [s1]]), max(order, deg + 1))
            s = nodes[:, 0]
            pts = P + s[:, None] * (Q - P)
            uv = s_slopes[j] * s + s_offsets[j]
            dv = 1.0 if D is None else D(pts)
            total += density * L * float(np.dot(w, uv * dv))
    return total


# -- symbolic paths ---------------------------------------------------------

def _symbolic_interior(polytope, u, AD, order):
    total = 0.0
    if u.guillemin_of is not None:
        if u.guillemin_of is not polytope and not _same_polytope(u.guillemin_of, polytope):
            raise ValueError("Guillemin part belongs to a different polytope")
        for i in range(polytope.n_facets):
            total += integrate_against_log(polytope, i, AD, extra_power=1)
    if u.poly is not None:
        F = AD * u.poly
        rule = measures(polytope, max(order, F.degree + 1))
        total += rule.integrate(F)
    return total


def _symbolic_boundary(polytope, u, D, order):
    total = 0.0
    if polytope.dim == 1:
        for i in range(polytope.n_facets):
            x = polytope.vertices[polytope.facet_vertices[i][0]]
            dval = 1.0 if D is None else float(D(x))
            total += dval * u(x)
        return total
    for i, cyc in enumerate(polytope.facet_vertices):
        P, Q = polytope.vertices[cyc[0]], polytope.vertices[cyc[1]]
        density = 1.0 / np.linalg.norm(polytope.normals[i].astype(float))
        L = float(np.linalg.norm(Q - P))
        if u.poly is not None:
            deg = u.poly.degree + (D.degree if D is not None else 0)
            nodes, w = simplex_rule(np.stack([P, Q]), max(order, deg + 1))
            dv = 1.0 if D is None else D(nodes)
            total += density * float(np.dot(w, u.poly(nodes) * dv))
        if u.guillemin_of is not None:
            for j in range(polytope.n_facets):
                if j == i:
                    continue  # l_j log l_j vanishes on facet j itself
                total += density * L * _segment_llogl(polytope, P, Q, j, D)
    return total


def _segment_llogl(polytope, P, Q, facet, D):
    """int_0^1 W(x(s)) l(x(s)) log l(x(s)) ds along the segment P->Q,
    where l is the linear form of ``facet`` and W = D (or 1)."""
    a = polytope.normals[facet].astype(float)
    lam = polytope.offsets[facet]
    lP = float(P @ a - lam)
    lQ = float(Q @ a - lam)
    alpha = lQ - lP
    degW = D.degree if D is not None else 0

    def Wfun(s):
        pts = P + np.asarray(s)[:, None] * (Q - P)
        return np.ones(len(pts)) if D is None else D(pts)

    if abs(alpha) <= 1e-13 * (1.0 + abs(lP)):
        # l constant along the segment
        if lP <= 0:
            return 0.0
        nodes, w = simplex_rule(np.array([[0.0], [1.0]]), degW + 2)
        return lP * np.log(lP) * float(np.dot(w, Wfun(nodes[:, 0])))
    # substitute t = l(x(s)): s = (t - lP)/alpha, ds = dt/alpha
    t0, t1 = sorted((lP, lQ))
    m = degW + 2  # degree of W(s(t)) * t in t
    ts = np.linspace(t0, t1, m + 1)
    ss = (ts - lP) / alpha
    vals = Wfun(ss) * ts
    coeffs = _fit_poly_t(ts, vals)
    from .integrate import _poly_log_integral
    return _poly_log_integral(coeffs, max(t0, 0.0), t1) / abs(alpha)


def _fit_poly_t(ts, vals):
    from .integrate import _fit_poly
    return _fit_poly(ts, vals, float(np.min(ts)), float(np.max(ts)))


def _same_polytope(p1, p2):
    return (p1.dim == p2.dim and np.array_equal(p1.normals, p2.normals)
            and np.allclose(p1.offsets, p2.offsets))


# ---------------------------------------------------------------------------
# Mabuchi-type functional
# ---------------------------------------------------------------------------

def mabuchi_functional(polytope: DelzantPolytope, A, u: SmoothSymbolicFunction,
                       D=None, order: int | None = None) -> float:
    """F_A(u) = -int log det(Hess u) D dmu + L_A(u).

    Requires a symbolic ``u`` with the Guillemin part of this polytope (the
    boundary-singular log det splits as -sum_i log l_i plus a function smooth
    up to the boundary, which is integrated by quadrature).
    """
    if not isinstance(u, SmoothSymbolicFunction) or u.guillemin_of is None:
        raise TypeError("mabuchi_functional needs a Guillemin-type potential")
    A, D = _weight_field(polytope, A, D)
    if order is None:
        order = max(default_order(), 20)
    P = D if D is not None else ScalarField.constant(polytope.dim, 1.0)
    # exact part: -sum_i int log(l_i) P dmu
    log_part = sum(integrate_against_log(polytope, i, P)
                   for i in range(polytope.n_facets))
    smooth1 = _smooth_logdet_part(polytope, u, P, order)
    smooth2 = _smooth_logdet_part(polytope, u, P, order + 8)
    lf = linear_functional(polytope, A, u, D, order=order)
    value = -(-log_part + smooth2) + lf.value
    return value


def _smooth_logdet_part(polytope, u, P, order):
    """int log(prod_i l_i * det Hess u) P dmu (integrand smooth up to boundary)."""
    rule = measures(polytope, order)
    pts = rule.interior_nodes
    H = u.hessian(pts)
    det = np.linalg.det(H)
    if np.any(det <= 0):
        raise NotStrictlyConvex("Hessian determinant nonpositive at a quadrature node")
    l = polytope.facet_values(pts)
    vals = (np.log(l).sum(axis=1) + np.log(det)) * P(pts)
    return float(np.dot(rule.interior_weights, vals))


def mabuchi_scaling_report(polytope: DelzantPolytope, u: SmoothSymbolicFunction,
                           D=None, order: int | None = None) -> float:
    """(2 pi)^n times the Mabuchi value at the polytope's average density."""
    a = average_density(polytope, D)
    F = mabuchi_functional(polytope, ScalarField.constant(polytope.dim, a), u,
                           D=D, order=order)
    return (2.0 * np.pi) ** polytope.dim * F


# ---------------------------------------------------------------------------
# filtration norm, ratio, extremal affine
# ---------------------------------------------------------------------------

def _affine_gram(polytope, D, order):
    n = polytope.dim
    rule = measures(polytope, order)
    pts = rule.interior_nodes
    w = rule.interior_weights * (1.0 if D is None else D(pts))
    basis = np.hstack([np.ones((len(pts), 1)), pts])
    G = basis.T @ (w[:, None] * basis)
    return G, rule


def _moments_of(polytope, u, order):
    """(int u dmu, int u xi_k dmu) and int u^2 dmu, each piecewise exact."""
    n = polytope.dim
    if isinstance(u, GridConvexFunction):
        R = u.mesh.moment_rows()
        b = R @ u.values
        M = u.mesh.mass_matrix()
        usq = float(u.values @ (M @ u.values))
        return b, usq
    if isinstance(u, PLConvexFunction):
        b = np.zeros(n + 1)
        usq = 0.0
        if n == 1:
            a0, b0 = float(polytope.vertices.min()), float(polytope.vertices.max())
            for x0, x1, j in pl_pieces_1d(u.slopes[:, 0], u.offsets, a0, b0):
                piece = ScalarField.affine(1, u.offsets[j], u.slopes[j])
                nodes, w = simplex_rule(np.array([[x0], [x1]]), max(order, 4))
                pv = piece(nodes)
                b[0] += float(np.dot(w, pv))
                b[1] += float(np.dot(w, pv * nodes[:, 0]))
                usq += float(np.dot(w, pv * pv))
            return b, usq
        polygon = polygon_vertices(polytope)
        for region, j in pl_regions_2d(u.slopes, u.offsets, polygon):
            piece = ScalarField.affine(2, u.offsets[j], u.slopes[j])
            b[0] += integrate_poly_over_polygon(piece, region)
            for k in range(n):
                xk = ScalarField.affine(2, 0.0, np.eye(2)[k])
                b[1 + k] += integrate_poly_over_polygon(piece * xk, region)
            usq += integrate_poly_over_polygon(piece * piece, region)
        return b, usq
    if isinstance(u, SmoothSymbolicFunction):
        rule = measures(polytope, max(order, 24))
        pts = rule.interior_nodes
        w = rule.interior_weights
        vals = u(pts)
        basis = np.hstack([np.ones((len(pts), 1)), pts])
        b = basis.T @ (w * vals)
        if u.guillemin_of is not None:
            # replace the quadrature-limited moment block with closed forms
            b = np.zeros(n + 1)
            for k in range(n + 1):
                phi = (ScalarField.constant(n, 1.0) if k == 0
                       else ScalarField.affine(n, 0.0, np.eye(n)[k - 1]))
                for i in range(polytope.n_facets):
                    b[k] += integrate_against_log(polytope, i, phi, extra_power=1)
                if u.poly is not None:
                    b[k] += rule.integrate(u.poly * phi)
        usq = float(np.dot(w, vals * vals))
        return b, usq
    raise TypeError(f"unsupported representation {type(u)!r}")


def filtration_norm(polytope: DelzantPolytope, u, order: int | None = None) -> float:
    """Squared L2(dmu) distance from u to the affine functions.

    Equals the squared norm of the degeneration carried by u: the infimum
    over affine l of int (u+l)^2 dmu - (int (u+l) dmu)^2 / Vol.
    """
    if order is None:
        order = default_order()
    G, _ = _affine_gram(polytope, None, order)
    b, usq = _moments_of(polytope, u, order)
    try:
        coef = np.linalg.solve(G, b)
    except np.linalg.LinAlgError:
        raise DegenerateMomentMatrix("affine moment matrix is singular")
    val = usq - float(b @ coef)
    return max(val, 0.0)


def plain_l2_deviation(polytope: DelzantPolytope, u, order: int | None = None) -> float:
    """int u^2 dmu - (int u dmu)^2 / Vol (constants quotiented only)."""
    if order is None:
        order = default_order()
    G, _ = _affine_gram(polytope, None, order)
    b, usq = _moments_of(polytope, u, order)
    return max(usq - b[0] ** 2 / G[0, 0], 0.0)


def w_ratio(polytope: DelzantPolytope, A, u, D=None,
            order: int | None = None) -> float:
    """L_A(u) / ||chi_u||; raises AffineInput when u is affine."""
    norm2 = filtration_norm(polytope, u, order)
    if norm2 <= 1e-24:
        raise AffineInput("u is affine; the ratio is undefined")
    lf = linear_functional(polytope, A, u, D, order)
    return lf.value / float(np.sqrt(norm2))


def extremal_affine(polytope: DelzantPolytope, D=None,
                    order: int | None = None) -> ScalarField:
    """The unique affine field making the linear functional vanish on affines.

    Solves int Abar * phi * D dmu = int_boundary phi * D dsigma over the
    affine basis phi = (1, xi_1, ..., xi_n).
    """
    n = polytope.dim
    if order is None:
        order = default_order() + (D.degree if D is not None else 0)
    if D is not None:
        _check_positive_weight(polytope, D, order)
    G, rule = _affine_gram(polytope, D, order)
    rhs = np.zeros(n + 1)
    for nodes, w in zip(rule.facet_nodes, rule.facet_weights):
        dv = w * (1.0 if D is None else D(nodes))
        rhs[0] += dv.sum()
        rhs[1:] += nodes.T @ dv
    try:
        coef = np.linalg.solve(G, rhs)
    except np.linalg.LinAlgError:
        raise DegenerateMomentMatrix("affine moment matrix is singular")
    return ScalarField.affine(n, coef[0], coef[1:])


def balance_residuals(polytope: DelzantPolytope, A, D=None,
                      order: int | None = None) -> np.ndarray:
    """Residuals int_boundary phi D dsigma - int A phi D dmu over the affine basis."""
    A, D = _weight_field(polytope, A, D)
    if order is None:
        order = default_order() + A.degree + (D.degree if D is not None else 0)
    G, rule = _affine_gram(polytope, D, order)
    rhs = np.zeros(polytope.dim + 1)
    for nodes, w in zip(rule.facet_nodes, rule.facet_weights):
        dv = w * (1.0 if D is None else D(nodes))
        rhs[0] += dv.sum()
        rhs[1:] += nodes.T @ dv
    pts = rule.interior_nodes
    w = rule.interior_weights * A(pts) * (1.0 if D is None else D(pts))
    basis = np.hstack([np.ones((len(pts), 1)), pts])
    return rhs - basis.T @ w


# ---------------------------------------------------------------------------
# L1 distance
# ---------------------------------------------------------------------------

def d1_distance(polytope: DelzantPolytope, u1, u2,
                resolution: float | None = None) -> float:
    """int |u1 - u2| dmu with sign-change-aware subdivision.

    Exact when both are grid functions on the same mesh; otherwise both are
    sampled on a fan mesh (refined once to estimate the error) and the PL
    difference is integrated exactly.
    """
    if (isinstance(u1, GridConvexFunction) and isinstance(u2, GridConvexFunction)
            and u1.mesh is u2.mesh):
        return integrate_abs_pl_mesh(u1.mesh, u1.values - u2.values)
    if resolution is None:
        resolution = polytope.diameter / 128
    mesh = fan_mesh(polytope, resolution)
    d = _sample(u1, mesh) - _sample(u2, mesh)
    return integrate_abs_pl_mesh(mesh, d)


def _sample(u, mesh):
    if isinstance(u, GridConvexFunction):
        return np.array([u(x) for x in mesh.vertices])
    return u(mesh.vertices)

"""Delzant polytopes, lattice-normalized measures, and the polar decomposition.

A polytope is presented by facets l_i(xi) = <xi, a_i> - lambda_i > 0 with
primitive integer normals a_i.  Vertices are enumerated in exact rational
arithmetic so the Delzant determinant condition can be checked exactly; all
derived float data (center, measures, quadrature) comes from those exact
vertices.

Measure conventions: d(mu) is Lebesgue measure on the polytope; on each facet
the boundary measure d(sigma) is Euclidean surface measure divided by |a_i|_2,
i.e. it is normalized by d(sigma) ^ d(l_i) = +/- d(mu).  In one dimension a
facet is a vertex and carries weight 1.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import (EmptyInterior, NonpositiveWeight, NotBounded, NotDelzant,
                     ValidationError)
from .fields import ScalarField
from .quadrature import simplex_rule, simplex_volume

__all__ = [
    "DelzantPolytope",
    "QuadratureRule",
    "build_polytope",
    "measures",
    "ray_exit",
    "average_density",
    "load_polytope",
    "save_polytope",
    "polytope_from_dict",
    "polytope_to_dict",
    "interval",
    "box",
    "simplex_cp2",
]


# ---------------------------------------------------------------------------
# exact rational helpers
# ---------------------------------------------------------------------------

def _solve_fraction(A, b):
    """Solve the square rational system A x = b exactly; None if singular."""
    n = len(b)
    M = [[Fraction(A[i][j]) for j in range(n)] + [Fraction(b[i])] for i in range(n)]
    for col in range(n):
        piv = next((r for r in range(col, n) if M[r][col] != 0), None)
        if piv is None:
            return None
        M[col], M[piv] = M[piv], M[col]
        inv = Fraction(1, 1) / M[col][col]
        M[col] = [v * inv for v in M[col]]
        for r in range(n):
            if r != col and M[r][col] != 0:
                f = M[r][col]
                M[r] = [vr - f * vc for vr, vc in zip(M[r], M[col])]
    return [M[i][n] for i in range(n)]


def _int_det(rows):
    """Exact determinant of a small integer matrix (n <= 3)."""
    n = len(rows)
    if n == 1:
        return rows[0][0]
    if n == 2:
        (a, b), (c, d) = rows
        return a * d - b * c
    if n == 3:
        (a, b, c), (d, e, f), (g, h, i) = rows
        return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)
    raise NotImplementedError("determinant for n > 3")


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DelzantPolytope:
    """Facet presentation of a Delzant polytope with derived vertex data."""

    dim: int
    normals: np.ndarray          # (d, n) int
    offsets: np.ndarray          # (d,)   float, l_i = <xi, a_i> - offsets[i]
    vertices: np.ndarray         # (V, n) float
    center: np.ndarray           # dmu-barycenter
    p_o: np.ndarray              # interior base point
    facet_vertices: tuple        # per facet: tuple of vertex indices (ordered)
    _exact_vertices: tuple = field(repr=False, default=())
    _exact_offsets: tuple = field(repr=False, default=())
    _exact_center: tuple = field(repr=False, default=())

    # -- facet linear forms -------------------------------------------------
    def facet_values(self, points) -> np.ndarray:
        """l_i(points) for all facets; shape (..., d)."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.normals.T.astype(float) - self.offsets

    def contains(self, points, tol: float = 1e-12) -> np.ndarray:
        return (self.facet_values(points) >= -tol).all(axis=-1)

    @property
    def n_facets(self) -> int:
        return self.normals.shape[0]

    @property
    def diameter(self) -> float:
        v = self.vertices
        diff = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((diff ** 2).sum(-1)).max())

    @property
    def inradius_at_center(self) -> float:
        """Distance from the center to the boundary."""
        norms = np.linalg.norm(self.normals.astype(float), axis=1)
        return float((self.facet_values(self.center) / norms).min())

    @property
    def chord_constant(self) -> float:
        """Lower bound c_o for cos(angle between a ray and its exit normal)."""
        return self.inradius_at_center / self.diameter

    def facet_measure_euclidean(self, i: int) -> float:
        """Euclidean (n-1)-volume of facet i."""
        idx = self.facet_vertices[i]
        pts = self.vertices[list(idx)]
        if self.dim == 1:
            return 1.0
        if self.dim == 2:
            return float(np.linalg.norm(pts[1] - pts[0]))
        base = pts.mean(axis=0)
        total = 0.0
        for a, b in zip(idx, idx[1:] + idx[:1]):
            total += simplex_volume(np.stack([base, self.vertices[a], self.vertices[b]]))
        return total

    def facet_measure_sigma(self, i: int) -> float:
        """Lattice-normalized boundary measure of facet i."""
        if self.dim == 1:
            return 1.0
        a = np.linalg.norm(self.normals[i].astype(float))
        return self.facet_measure_euclidean(i) / a

    def volume_divergence(self) -> float:
        """Volume via the divergence theorem over facets (independent check)."""
        total = 0.0
        for i in range(self.n_facets):
            a = np.linalg.norm(self.normals[i].astype(float))
            # <xi, outward unit normal> = -offsets[i]/|a_i| on facet i
            total += (-self.offsets[i] / a) * self.facet_measure_euclidean(i)
        return total / self.dim

    def __repr__(self):
        return (f"DelzantPolytope(dim={self.dim}, facets={self.n_facets}, "
                f"vertices={len(self.vertices)})")


@dataclass(frozen=True)
class QuadratureRule:
    """Interior and per-facet quadrature for (dmu, dsigma) on a polytope."""

    polytope: DelzantPolytope
    order: int
    interior_nodes: np.ndarray
    interior_weights: np.ndarray
    facet_nodes: tuple    # per facet: (K_i, n) array
    facet_weights: tuple  # per facet: (K_i,) array, sigma-normalized

    def integrate(self, f) -> float:
        """Integral of ``f`` over the polytope against dmu."""
        vals = f(self.interior_nodes) if callable(f) else np.asarray(f)
        return float(np.dot(self.interior_weights, vals))

    def boundary_integrate(self, f) -> float:
        """Integral of ``f`` over the boundary against dsigma."""
        total = 0.0
        for nodes, w in zip(self.facet_nodes, self.facet_weights):
            vals = f(nodes) if callable(f) else np.asarray(f)
            total += float(np.dot(w, vals))
        return total

    def facet_integrate(self, i: int, f) -> float:
        vals = f(self.facet_nodes[i]) if callable(f) else np.asarray(f)
        return float(np.dot(self.facet_weights[i], vals))

    @property
    def volume(self) -> float:
        return float(self.interior_weights.sum())

    @property
    def boundary_volume(self) -> float:
        return float(sum(w.sum() for w in self.facet_weights))


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def build_polytope(facets, p_o=None) -> DelzantPolytope:
    """Build and validate a Delzant polytope from facet data.

    Parameters
    ----------
    facets : sequence of (normal, offset)
        Integer normal vectors a_i and real offsets lambda_i defining
        l_i(xi) = <xi, a_i> - lambda_i > 0.
    p_o : array_like, optional
        Interior base point; defaults to the dmu-barycenter.
    """
    if not facets:
        raise ValidationError("facets: empty facet list")
    normals = []
    offsets = []
    for k, (a, lam) in enumerate(facets):
        a = np.asarray(a)
        if a.ndim != 1:
            raise ValidationError(f"facets[{k}].a: normal must be a vector")
        if not np.all(np.equal(np.mod(a, 1), 0)):
            raise ValidationError(f"facets[{k}].a: normal must be integer")
        a = a.astype(int)
        if np.all(a == 0):
            raise ValidationError(f"facets[{k}].a: zero normal")
        g = math.gcd(*[abs(int(v)) for v in a]) if a.size > 1 else abs(int(a[0]))
        if g != 1:
            raise NotDelzant(f"facet {k}: normal {a.tolist()} is not primitive (gcd={g})")
        normals.append(a)
        offsets.append(lam)
    normals = np.asarray(normals, dtype=int)
    n = normals.shape[1]
    if n > 3:
        raise NotImplementedError("dimensions above 3 are out of scope")
    offsets_exact = [Fraction(float(l)).limit_denominator(10 ** 12) for l in offsets]
    offsets = np.asarray([float(l) for l in offsets_exact])
    d = len(offsets)

    _check_bounded(normals)

    # vertex candidates: solutions of n-subsets of active facets
    verts_exact = []
    active_sets = []
    for subset in itertools.combinations(range(d), n):
        A = [normals[i].tolist() for i in subset]
        b = [offsets_exact[i] for i in subset]
        x = _solve_fraction(A, b)
        if x is None:
            continue
        vals = [sum(Fraction(int(normals[i][j])) * x[j] for j in range(n)) - offsets_exact[i]
                for i in range(d)]
        if any(v < 0 for v in vals):
            continue
        active = tuple(i for i, v in enumerate(vals) if v == 0)
        if len(active) > n:
            raise NotDelzant(
                f"vertex {tuple(float(c) for c in x)} lies on {len(active)} facets; "
                f"the polytope is not simple")
        for w, _ in verts_exact:
            if all(wi == xi for wi, xi in zip(w, x)):
                break
        else:
            verts_exact.append((tuple(x), active))
            active_sets.append(active)
    if not verts_exact:
        raise EmptyInterior("facet system has no vertices")

    # Delzant condition: the n active normals at each vertex form a Z^n basis
    for (x, active) in verts_exact:
        det = _int_det([normals[i].tolist() for i in active])
        if abs(det) != 1:
            raise NotDelzant(
                f"vertex {tuple(float(c) for c in x)}: facet normals "
                f"{[normals[i].tolist() for i in active]} have determinant {det}")

    # strict interior check at the vertex average (exact)
    vavg = [sum(v[0][j] for v in verts_exact) / Fraction(len(verts_exact))
            for j in range(n)]
    for i in range(d):
        li = sum(Fraction(int(normals[i][j])) * vavg[j] for j in range(n)) - offsets_exact[i]
        if li <= 0:
            raise EmptyInterior(f"facet {i} is active on the whole region (dimension deficit)")

    vertices = np.asarray([[float(c) for c in v] for v, _ in verts_exact])

    facet_vertices = _facet_vertex_cycles(n, verts_exact, d)

    center_exact, _ = _exact_barycenter(n, verts_exact, facet_vertices, vavg)
    center = np.asarray([float(c) for c in center_exact])

    if p_o is None:
        p_o_arr = center.copy()
    else:
        p_o_arr = np.asarray(p_o, dtype=float)
        if p_o_arr.shape != (n,):
            raise ValidationError("p_o: wrong dimension")
    poly = DelzantPolytope(
        dim=n,
        normals=normals,
        offsets=offsets,
        vertices=vertices,
        center=center,
        p_o=p_o_arr,
        facet_vertices=facet_vertices,
        _exact_vertices=tuple(v for v, _ in verts_exact),
        _exact_offsets=tuple(offsets_exact),
        _exact_center=tuple(center_exact),
    )
    for arr in (poly.normals, poly.offsets, poly.vertices, poly.center, poly.p_o):
        arr.setflags(write=False)
    if not np.all(poly.facet_values(p_o_arr) > 0):
        raise ValidationError("p_o: base point is not strictly interior")
    return poly


def _check_bounded(normals):
    """Raise NotBounded unless the recession cone {<a_i, e> >= 0} is {0}."""
    d, n = normals.shape
    if np.linalg.matrix_rank(normals.astype(float)) < n:
        raise NotBounded("facet normals do not span; recession cone contains a line")
    candidates = []
    if n == 1:
        candidates = [np.array([1]), np.array([-1])]
    elif n == 2:
        for a in normals:
            candidates.append(np.array([-a[1], a[0]]))
            candidates.append(np.array([a[1], -a[0]]))
    else:
        for a, b in itertools.combinations(normals, 2):
            c = np.cross(a, b)
            if np.any(c != 0):
                candidates.append(c)
                candidates.append(-c)
    for ray in candidates:
        if np.all(normals @ ray >= 0):
            raise NotBounded(f"recession direction {ray.tolist()} is unblocked")


def _facet_vertex_cycles(n, verts_exact, d):
    """Vertex indices per facet, ordered along the facet for n = 2, 3."""
    on_facet = [[] for _ in range(d)]
    for vi, (_, active) in enumerate(verts_exact):
        for i in active:
            on_facet[i].append(vi)
    cycles = []
    for i in range(d):
        idx = on_facet[i]
        if n == 1:
            cycles.append(tuple(idx))
            continue
        if n == 2:
            if len(idx) != 2:
                raise NotDelzant(f"facet {i} has {len(idx)} vertices; expected 2")
            cycles.append(tuple(idx))
            continue
        # n == 3: order the facet polygon by shared-edge adjacency
        cycles.append(tuple(_order_polygon(i, idx, verts_exact)))
    return tuple(cycles)


def _order_polygon(facet, idx, verts_exact):
    remaining = list(idx)
    cycle = [remaining.pop(0)]
    while remaining:
        cur_active = set(verts_exact[cycle[-1]][1])
        for k, vi in enumerate(remaining):
            shared = cur_active & set(verts_exact[vi][1])
            shared.discard(facet)
            if shared:  # adjacent along an edge of this facet
                cycle.append(remaining.pop(k))
                break
        else:
            raise NotDelzant(f"facet {facet}: could not order its vertex polygon")
    return cycle


def _exact_barycenter(n, verts_exact, facet_vertices, interior_pt):
    """Exact dmu-barycenter via a fan over the facets from an interior point."""
    vol = Fraction(0)
    cen = [Fraction(0)] * n
    pts = [v for v, _ in verts_exact]

    def add_simplex(simplex):
        nonlocal vol, cen
        rows = [[simplex[k + 1][j] - simplex[0][j] for j in range(n)] for k in range(n)]
        det = rows[0][0] if n == 1 else (
            rows[0][0] * rows[1][1] - rows[0][1] * rows[1][0] if n == 2 else _frac_det3(rows))
        v = abs(det) / Fraction(math.factorial(n))
        if v == 0:
            return
        vol += v
        for j in range(n):
            cen[j] += v * sum(p[j] for p in simplex) / Fraction(n + 1)

    for i, cyc in enumerate(facet_vertices):
        if n == 1:
            add_simplex([interior_pt, pts[cyc[0]]])
        elif n == 2:
            add_simplex([interior_pt, pts[cyc[0]], pts[cyc[1]]])
        else:
            base = cyc[0]
            for a, b in zip(cyc[1:], cyc[2:]):
                add_simplex([interior_pt, pts[base], pts[a], pts[b]])
    if vol == 0:
        raise EmptyInterior("zero volume")
    return [c / vol for c in cen], vol


def _frac_det3(rows):
    (a, b, c), (d, e, f), (g, h, i) = rows
    return a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g)


# ---------------------------------------------------------------------------
# measures and rays
# ---------------------------------------------------------------------------

def measures(polytope: DelzantPolytope, order: int = 12) -> QuadratureRule:
    """Quadrature for dmu (fan triangulation from the center) and dsigma.

    Facet weights carry the lattice density 1/|a_i|_2, so the rule's boundary
    volume is Vol(boundary, dsigma).  Exact for polynomials up to ``order``.
    """
    n = polytope.dim
    pts = polytope.vertices
    o = polytope.center
    int_nodes, int_w = [], []
    for i, cyc in enumerate(polytope.facet_vertices):
        for simplex in _facet_fan(n, pts, o, cyc):
            nodes, w = simplex_rule(simplex, order)
            int_nodes.append(nodes)
            int_w.append(w)
    interior_nodes = np.concatenate(int_nodes)
    interior_weights = np.concatenate(int_w)

    facet_nodes, facet_weights = [], []
    for i, cyc in enumerate(polytope.facet_vertices):
        density = 1.0 if n == 1 else 1.0 / np.linalg.norm(polytope.normals[i].astype(float))
        if n == 1:
            facet_nodes.append(pts[list(cyc)])
            facet_weights.append(np.array([1.0]))
            continue
        nodes_list, w_list = [], []
        if n == 2:
            nodes, w = simplex_rule(pts[list(cyc)], order)
            nodes_list.append(nodes)
            w_list.append(w * density)
        else:
            base = pts[list(cyc)].mean(axis=0)
            for a, b in zip(cyc, cyc[1:] + cyc[:1]):
                nodes, w = simplex_rule(np.stack([base, pts[a], pts[b]]), order)
                nodes_list.append(nodes)
                w_list.append(w * density)
        facet_nodes.append(np.concatenate(nodes_list))
        facet_weights.append(np.concatenate(w_list))

    rule = QuadratureRule(
        polytope=polytope,
        order=order,
        interior_nodes=interior_nodes,
        interior_weights=interior_weights,
        facet_nodes=tuple(facet_nodes),
        facet_weights=tuple(facet_weights),
    )
    for arr in (rule.interior_nodes, rule.interior_weights):
        arr.setflags(write=False)
    return rule


def _facet_fan(n, pts, o, cyc):
    if n == 1:
        yield np.stack([o, pts[cyc[0]]])
    elif n == 2:
        yield np.stack([o, pts[cyc[0]], pts[cyc[1]]])
    else:
        base = cyc[0]
        for a, b in zip(cyc[1:], cyc[2:]):
            yield np.stack([o, pts[base], pts[a], pts[b]])


def ray_exit(polytope: DelzantPolytope, e, origin=None):
    """Exit data of the ray from the center in unit direction ``e``.

    Returns ``(R_e, q_e, facet_index)`` with q_e = o + R_e e on the boundary.
    Corner hits resolve to the lowest facet index.
    """
    e = np.asarray(e, dtype=float)
    if abs(np.linalg.norm(e) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    o = polytope.center if origin is None else np.asarray(origin, dtype=float)
    lo = polytope.facet_values(o)
    de = polytope.normals.astype(float) @ e
    with np.errstate(divide="ignore"):
        t = np.where(de < -1e-14, lo / np.maximum(-de, 1e-300), np.inf)
    R = float(t.min())
    facet = int(np.flatnonzero(t <= R * (1 + 1e-12))[0])
    return R, o + R * e, facet


def average_density(polytope: DelzantPolytope, density: ScalarField | None = None,
                    order: int | None = None) -> float:
    """Vol(boundary, D dsigma) / Vol(polytope, D dmu); D == 1 when omitted."""
    if order is None:
        order = 12 + (density.degree if density is not None else 0)
    rule = measures(polytope, order)
    if density is None:
        return rule.boundary_volume / rule.volume
    _require_positive(polytope, density, rule)
    num = rule.boundary_integrate(density)
    den = rule.integrate(density)
    return num / den


def _require_positive(polytope, density, rule):
    vals = [density(rule.interior_nodes).min(), density(polytope.vertices).min()]
    vals += [density(nodes).min() for nodes in rule.facet_nodes if len(nodes)]
    if min(vals) <= 0:
        raise NonpositiveWeight("density must be positive on the closed polytope")


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def polytope_to_dict(polytope: DelzantPolytope) -> dict:
    return {
        "n": polytope.dim,
        "facets": [{"a": a.tolist(), "lambda": float(l)}
                   for a, l in zip(polytope.normals, polytope.offsets)],
        "p_o": polytope.p_o.tolist(),
    }


def polytope_from_dict(data: dict) -> DelzantPolytope:
    try:
        n = int(data["n"])
        raw = data["facets"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"polytope file: missing or malformed field ({exc})")
    facets = []
    for k, f in enumerate(raw):
        a = f.get("a")
        lam = f.get("lambda")
        if a is None or lam is None:
            raise ValidationError(f"facets[{k}]: need 'a' and 'lambda'")
        if len(a) != n:
            raise ValidationError(f"facets[{k}].a: expected {n} components")
        for comp in a:
            if float(comp) != int(comp):
                raise ValidationError(f"facets[{k}].a: non-integer normal component {comp}")
        facets.append(([int(c) for c in a], float(lam)))
    return build_polytope(facets, p_o=data.get("p_o"))


def load_polytope(path) -> DelzantPolytope:
    with open(path) as fh:
        return polytope_from_dict(json.load(fh))


def save_polytope(polytope: DelzantPolytope, path) -> None:
    with open(path, "w") as fh:
        json.dump(polytope_to_dict(polytope), fh, indent=1)


# ---------------------------------------------------------------------------
# stock polytopes
# ---------------------------------------------------------------------------

def interval(a: float = -1.0, b: float = 1.0, p_o=None) -> DelzantPolytope:
    """The interval [a, b] with facets xi - a > 0 and b - xi > 0."""
    return build_polytope([([1], a), ([-1], -b)], p_o=p_o)


def box(bounds=((-1.0, 1.0), (-1.0, 1.0)), p_o=None) -> DelzantPolytope:
    """Axis-aligned box given per-axis (low, high) bounds."""
    n = len(bounds)
    facets = []
    for k, (lo, hi) in enumerate(bounds):
        e = [0] * n
        e[k] = 1
        facets.append((list(e), lo))
        e[k] = -1
        facets.append((list(e), -hi))
    return build_polytope(facets, p_o=p_o)


def simplex_cp2(p_o=None) -> DelzantPolytope:
    """The standard simplex {x > 0, y > 0, x + y < 1}."""
    return build_polytope([([1, 0], 0), ([0, 1], 0), ([-1, -1], -1)], p_o=p_o)

"""Exact integration engines used by the functionals.

Three families:

* piecewise-linear machinery: the active-piece subdivision of a max-of-affine
  function over an interval (breakpoints) or a polygon (convex clipping),
  so integrals of PL functions against polynomial weights are piecewise exact;
* logarithmic closed forms: integrals of P(xi) * l^e * log(l) over the
  polytope for a facet form l, reduced by the coarea formula to 1-D integrals
  of (polynomial) * log against the level value, which have closed-form
  antiderivatives.  These make entropy-type integrals of Guillemin potentials
  exact instead of quadrature-limited;
* sign-aware absolute integrals for the L1 distance between potentials.
"""

from __future__ import annotations

import numpy as np

from .quadrature import simplex_rule, simplex_volume

__all__ = [
    "pl_pieces_1d",
    "polygon_vertices",
    "clip_polygon",
    "pl_regions_2d",
    "integrate_poly_over_polygon",
    "integrate_against_log",
    "integrate_abs_pl_mesh",
]


# ---------------------------------------------------------------------------
# PL subdivision
# ---------------------------------------------------------------------------

def pl_pieces_1d(slopes, offsets, a: float, b: float, tol: float = 1e-12):
    """Active-piece decomposition of max_j (slopes[j] x + offsets[j]) on [a, b].

    Returns a list of (x0, x1, j) with x0 < x1 covering [a, b].
    """
    slopes = np.asarray(slopes, dtype=float).ravel()
    offsets = np.asarray(offsets, dtype=float).ravel()
    order = np.lexsort((offsets, slopes))
    lines = []
    for j in order:
        s, c = slopes[j], offsets[j]
        if lines and abs(lines[-1][0] - s) <= tol:
            if c <= lines[-1][1]:
                continue
            lines.pop()
        while lines:
            if len(lines) == 1:
                s0, c0, _ = lines[0]
                x = (c0 - c) / (s - s0)
                lines[0] = (s0, c0, lines[0][2])
                break
            s1, c1, _ = lines[-1]
            s0, c0, _ = lines[-2]
            x_prev = (c0 - c1) / (s1 - s0)   # where last line became active
            x_new = (c1 - c) / (s - s1)      # where new line overtakes it
            if x_new <= x_prev + tol:
                lines.pop()
            else:
                break
        lines.append((s, c, int(j)))
    # breakpoints between consecutive active lines
    pieces = []
    xs = [a]
    for (s0, c0, j0), (s1, c1, j1) in zip(lines, lines[1:]):
        xs.append((c0 - c1) / (s1 - s0))
    xs.append(b)
    for k, (s, c, j) in enumerate(lines):
        x0, x1 = max(a, xs[k]), min(b, xs[k + 1])
        if x1 > x0 + tol:
            pieces.append((x0, x1, j))
    if not pieces:  # single active line over a tiny interval
        vals = slopes * (0.5 * (a + b)) + offsets
        pieces = [(a, b, int(np.argmax(vals)))]
    return pieces


def polygon_vertices(polytope) -> np.ndarray:
    """Vertices of a 2-D polytope ordered counterclockwise."""
    if polytope.dim != 2:
        raise ValueError("polygon_vertices needs a 2-D polytope")
    v = polytope.vertices
    ang = np.arctan2(v[:, 1] - polytope.center[1], v[:, 0] - polytope.center[0])
    return v[np.argsort(ang)]


def clip_polygon(points, normal, offset, tol: float = 1e-12) -> np.ndarray:
    """Clip a convex polygon (ordered vertices) by {x : normal.x >= offset}."""
    pts = np.asarray(points, dtype=float)
    if len(pts) == 0:
        return pts
    vals = pts @ np.asarray(normal, dtype=float) - offset
    out = []
    m = len(pts)
    for k in range(m):
        p, q = pts[k], pts[(k + 1) % m]
        vp, vq = vals[k], vals[(k + 1) % m]
        if vp >= -tol:
            out.append(p)
        if (vp > tol and vq < -tol) or (vp < -tol and vq > tol):
            t = vp / (vp - vq)
            out.append(p + t * (q - p))
    if not out:
        return np.zeros((0, 2))
    # drop duplicates
    cleaned = [out[0]]
    for p in out[1:]:
        if np.linalg.norm(p - cleaned[-1]) > tol:
            cleaned.append(p)
    if len(cleaned) > 1 and np.linalg.norm(cleaned[0] - cleaned[-1]) <= tol:
        cleaned.pop()
    return np.asarray(cleaned)


def pl_regions_2d(slopes, offsets, polygon, tol: float = 1e-12):
    """Active regions of max_j(<slopes[j], x> + offsets[j]) within a polygon.

    Returns a list of (region polygon, j); regions with negligible area are
    dropped.  The union covers the polygon up to measure zero.
    """
    slopes = np.asarray(slopes, dtype=float)
    offsets = np.asarray(offsets, dtype=float)
    P = len(slopes)
    regions = []
    for j in range(P):
        poly = np.asarray(polygon, dtype=float)
        for k in range(P):
            if k == j:
                continue
            poly = clip_polygon(poly, slopes[j] - slopes[k], offsets[k] - offsets[j], tol)
            if len(poly) < 3:
                break
        if len(poly) >= 3 and _polygon_area(poly) > 1e-14:
            regions.append((poly, j))
    return regions


def _polygon_area(pts) -> float:
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def integrate_poly_over_polygon(F, polygon, order: int | None = None) -> float:
    """Exact integral of a polynomial callable over a convex polygon."""
    pts = np.asarray(polygon, dtype=float)
    if len(pts) < 3:
        return 0.0
    if order is None:
        order = getattr(F, "degree", 6) + 2
    base = pts.mean(axis=0)
    total = 0.0
    for k in range(len(pts)):
        tri = np.stack([base, pts[k], pts[(k + 1) % len(pts)]])
        nodes, w = simplex_rule(tri, order)
        total += float(np.dot(w, F(nodes)))
    return total


# ---------------------------------------------------------------------------
# logarithmic closed forms
# ---------------------------------------------------------------------------

def _int_tk_log(k: int, t0: float, t1: float) -> float:
    """Integral of t^k log t over [t0, t1], 0 <= t0 <= t1 (limit 0 at t=0)."""
    def F(t):
        if t <= 0.0:
            return 0.0
        return t ** (k + 1) * (np.log(t) / (k + 1) - 1.0 / (k + 1) ** 2)
    return F(t1) - F(t0)


def _poly_log_integral(coeffs, t0: float, t1: float) -> float:
    """Integral of (sum_k coeffs[k] t^k) * log t over [t0, t1]."""
    return sum(c * _int_tk_log(k, t0, t1) for k, c in enumerate(coeffs) if c != 0.0)


def _chord_endpoints(polygon, a, lam, t, tol=1e-12):
    """Endpoints of the level chord {<x, a> - lam = t} inside the polygon."""
    pts = np.asarray(polygon, dtype=float)
    vals = pts @ a - lam - t
    hits = []
    m = len(pts)
    for k in range(m):
        vp, vq = vals[k], vals[(k + 1) % m]
        if (vp <= tol and vq >= -tol) or (vp >= -tol and vq <= tol):
            if abs(vp - vq) <= tol:
                continue  # edge parallel to the level line
            s = vp / (vp - vq)
            if -tol <= s <= 1 + tol:
                hits.append(pts[k] + np.clip(s, 0, 1) * (pts[(k + 1) % m] - pts[k]))
    if len(hits) < 2:
        return None
    # keep the two extreme points along the chord direction
    w = np.array([-a[1], a[0]], dtype=float)
    w /= np.linalg.norm(w)
    proj = [h @ w for h in hits]
    return hits[int(np.argmin(proj))], hits[int(np.argmax(proj))]


def _chord_moment(polygon, a, lam, P, t, order) -> float:
    """Integral of P over the level chord at value t (1-D Hausdorff measure)."""
    ends = _chord_endpoints(polygon, a, lam, t)
    if ends is None:
        return 0.0
    nodes, w = simplex_rule(np.stack(ends), order)
    return float(np.dot(w, P(nodes)))


def integrate_against_log(polytope, facet: int, P, extra_power: int = 0) -> float:
    """Exact integral of P(xi) * l^extra_power * log(l) over the polytope,
    where l is the linear form of the given facet.

    P must be polynomial (needs a ``degree`` attribute and vectorized call).
    Uses the coarea formula: slices between vertex levels have polynomial
    chord moments, recovered by interpolation and integrated against log in
    closed form.
    """
    a = polytope.normals[facet].astype(float)
    lam = polytope.offsets[facet]
    na = np.linalg.norm(a)
    degP = getattr(P, "degree", 0)
    if polytope.dim == 1:
        s = float(a[0])
        # substitute t = s*xi - lam; xi = (t + lam)/s; dxi = dt/|s|
        levels = np.sort(polytope.facet_values(polytope.vertices)[:, facet])
        t0, t1 = max(0.0, levels[0]), levels[-1]
        m = degP + extra_power + 1

        def integrand_coeffs():
            ts = np.linspace(t0, t1, m + 1) if m > 0 else np.array([0.5 * (t0 + t1)])
            xs = (ts + lam) / s
            vals = P(xs[:, None]) * ts ** extra_power
            return _fit_poly(ts, vals, t0, t1)
        coeffs = integrand_coeffs()
        return _poly_log_integral_shifted(coeffs, t0, t1) / abs(s)

    if polytope.dim != 2:
        raise NotImplementedError("log integrals implemented for dimensions 1 and 2")

    polygon = polygon_vertices(polytope)
    levels = np.unique(np.round(polygon @ a - lam, 14))
    levels = levels[levels >= -1e-12]
    levels[levels < 0] = 0.0
    total = 0.0
    mom_order = degP + 2
    deg_m = degP + extra_power + 1   # chord moment degree <= degP + 1, plus t^extra
    for s0, s1 in zip(levels, levels[1:]):
        if s1 - s0 <= 1e-14:
            continue
        ts = _cheb_points(s0, s1, deg_m + 1)
        vals = np.array([
            _chord_moment(polygon, a, lam, P, t, mom_order) * t ** extra_power
            for t in ts])
        coeffs = _fit_poly(ts, vals, s0, s1)
        total += _poly_log_integral_shifted(coeffs, s0, s1)
    return total / na


def _cheb_points(a, b, m):
    if m == 1:
        return np.array([0.5 * (a + b)])
    k = np.arange(m)
    x = np.cos(np.pi * k / (m - 1))
    return 0.5 * (a + b) + 0.5 * (b - a) * x[::-1]


def _fit_poly(ts, vals, a, b):
    """Coefficients (in t) of the polynomial through (ts, vals).

    Fitted in a shifted/scaled basis for conditioning, then expanded.
    """
    mid, half = 0.5 * (a + b), max(0.5 * (b - a), 1e-300)
    z = (np.asarray(ts) - mid) / half
    m = len(ts)
    V = np.vander(z, m, increasing=True)
    cz = np.linalg.solve(V, np.asarray(vals, dtype=float))
    # expand sum cz_k ((t-mid)/half)^k into coefficients of t
    poly = np.polynomial.Polynomial([0.0])
    base = np.polynomial.Polynomial([-mid / half, 1.0 / half])
    for k, c in enumerate(cz):
        poly = poly + c * base ** k
    return poly.coef


def _poly_log_integral_shifted(coeffs, t0, t1):
    return _poly_log_integral(coeffs, t0, t1)


# ---------------------------------------------------------------------------
# absolute integrals of PL functions
# ---------------------------------------------------------------------------

def integrate_abs_pl_mesh(mesh, values) -> float:
    """Exact integral of |PL interpolant| over the mesh (sign-aware splits)."""
    u = np.asarray(values, dtype=float)
    total = 0.0
    for t, simplex in enumerate(mesh.simplices):
        vals = u[simplex]
        pts = mesh.vertices[simplex]
        vol = mesh.volumes[t]
        if np.all(vals >= 0) or np.all(vals <= 0):
            total += abs(vals.mean()) * vol
            continue
        if mesh.dim == 1:
            (x0,), (x1,) = pts
            v0, v1 = vals
            xr = x0 + v0 / (v0 - v1) * (x1 - x0)
            total += 0.5 * abs(v0) * abs(xr - x0) + 0.5 * abs(v1) * abs(x1 - xr)
            continue
        g = mesh.grad_op[t] @ vals
        c = vals[0] - g @ pts[0]
        tri = pts
        for sign in (1.0, -1.0):
            piece = clip_polygon(tri, sign * g, -sign * c)
            if len(piece) >= 3:
                total += sign * integrate_poly_over_polygon(
                    _AffineEval(g, c), piece, order=2)
    return total


class _AffineEval:
    degree = 1

    def __init__(self, g, c):
        self.g = np.asarray(g, dtype=float)
        self.c = float(c)

    def __call__(self, pts):
        return np.atleast_2d(pts) @ self.g + self.c

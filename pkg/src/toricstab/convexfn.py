"""Convex functions on the polytope and their dual-side constructions.

Three representations:

* :class:`PLConvexFunction` -- max of finitely many affine pieces (the
  test-degeneration carrier);
* :class:`GridConvexFunction` -- P1 interpolant on a triangulation with a
  hinge-convexity certificate (the optimization/filtration carrier);
* :class:`SmoothSymbolicFunction` -- structured closed form: an optional
  Guillemin part (sum of l_i log l_i over the facets) plus an optional
  polynomial, which covers canonical potentials and analytic test functions
  with exact gradients and Hessians.

Dual-side machinery: conjugate (Legendre) grids, subdifferentials, sublevel
sections of the conjugate, radial normal images, ray truncation, and lattice
rounding of a convex function to a rational piecewise-linear approximant.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

import numpy as np

from .errors import (EmptyLattice, EvaluationOutsideClosure, FullCoverage,
                     MeshTooCoarse, NotCompact)
from .fields import ScalarField
from .geometry import DelzantPolytope, ray_exit
from .integrate import pl_pieces_1d, pl_regions_2d, polygon_vertices
from .mesh import Mesh, fan_mesh
from .optimize import min_norm_point, projected_concave_ascent

__all__ = [
    "PLConvexFunction",
    "GridConvexFunction",
    "SmoothSymbolicFunction",
    "guillemin_potential",
    "legendre_transform",
    "conjugate_value",
    "subdifferential",
    "normalize_at",
    "section_sublevel",
    "normal_image",
    "truncate",
    "round_to_filtration",
    "LegendreGrid",
    "SublevelSection",
    "RadialSet",
]

HINGE_TOL = 1e-10


# ---------------------------------------------------------------------------
# representations
# ---------------------------------------------------------------------------

class PLConvexFunction:
    """max_j (<slopes[j], xi> + offsets[j]); finite on all of R^n."""

    def __init__(self, slopes, offsets, rational: bool | None = None):
        self.slopes = np.atleast_2d(np.asarray(slopes, dtype=float))
        self.offsets = np.asarray(offsets, dtype=float).ravel()
        if self.slopes.shape[0] != self.offsets.size:
            raise ValueError("slopes/offsets length mismatch")
        self.rational = rational

    @property
    def nvars(self):
        return self.slopes.shape[1]

    @property
    def n_pieces(self):
        return len(self.offsets)

    def __call__(self, points):
        pts = np.asarray(points, dtype=float)
        scalar_in = pts.ndim == 1
        vals = np.atleast_2d(pts) @ self.slopes.T + self.offsets
        out = vals.max(axis=-1)
        return float(out[0]) if scalar_in else out

    def active_indices(self, q, tol: float = 1e-9):
        vals = np.atleast_1d(np.asarray(q, dtype=float)) @ self.slopes.T + self.offsets
        m = vals.max()
        return np.flatnonzero(vals >= m - tol * (1.0 + abs(m)))

    def shifted_by_affine(self, g, c) -> "PLConvexFunction":
        """The function u(xi) - (<g, xi> + c)."""
        return PLConvexFunction(self.slopes - np.asarray(g, dtype=float),
                                self.offsets - float(c), rational=None)

    def simplify(self, polytope: DelzantPolytope, tol: float = 1e-11) -> "PLConvexFunction":
        """Drop pieces that are active nowhere on the closed polytope."""
        keep = []
        W, uW = _pl_candidates(self, polytope)
        vals = W @ self.slopes.T + self.offsets   # (K, P)
        for j in range(self.n_pieces):
            if np.any(vals[:, j] >= uW - tol * (1.0 + np.abs(uW))):
                keep.append(j)
        return PLConvexFunction(self.slopes[keep], self.offsets[keep], self.rational)

    def to_dict(self):
        return {"kind": "pl",
                "pieces": [{"p": p.tolist(), "c": float(c)}
                           for p, c in zip(self.slopes, self.offsets)]}

    @classmethod
    def from_dict(cls, data):
        pieces = data["pieces"]
        return cls([p["p"] for p in pieces], [p["c"] for p in pieces])

    def __repr__(self):
        return f"PLConvexFunction(pieces={self.n_pieces}, nvars={self.nvars})"


class GridConvexFunction:
    """P1 interpolant on a triangulation with hinge-convexity certificate."""

    def __init__(self, mesh: Mesh, values, convex_tol: float = HINGE_TOL,
                 require_convex: bool = True):
        self.mesh = mesh
        self.values = np.asarray(values, dtype=float)
        if self.values.shape != (mesh.n_nodes,):
            raise ValueError("values must be one per mesh node")
        self.hinge_certificate = mesh.hinge_jumps(self.values)
        self.convex_tol = convex_tol
        if require_convex and not self.is_convex(convex_tol):
            raise MeshTooCoarse(
                f"hinge violation {self.min_hinge_jump:.3e} below -{convex_tol:g}")

    @property
    def nvars(self):
        return self.mesh.dim

    @property
    def min_hinge_jump(self) -> float:
        if len(self.hinge_certificate) == 0:
            return 0.0
        return float(self.hinge_certificate.min())

    def is_convex(self, tol: float = HINGE_TOL) -> bool:
        return self.min_hinge_jump >= -tol

    def __call__(self, points):
        return self.mesh.interpolate(self.values, points)

    def shifted_by_affine(self, g, c) -> "GridConvexFunction":
        vals = self.values - self.mesh.vertices @ np.asarray(g, dtype=float) - float(c)
        out = GridConvexFunction(self.mesh, vals, self.convex_tol, require_convex=False)
        return out

    @classmethod
    def from_callable(cls, mesh: Mesh, u, convex_tol: float = HINGE_TOL,
                      require_convex: bool = False):
        return cls(mesh, u(mesh.vertices), convex_tol, require_convex)

    def to_dict(self):
        return {"kind": "grid",
                "vertices": self.mesh.vertices.tolist(),
                "simplices": self.mesh.simplices.tolist(),
                "values": self.values.tolist()}

    def __repr__(self):
        return (f"GridConvexFunction(nodes={self.mesh.n_nodes}, "
                f"min_jump={self.min_hinge_jump:.2e})")


class SmoothSymbolicFunction:
    """Structured closed form: optional Guillemin part plus a polynomial.

    value = sum_i l_i log l_i  (over the facets of ``guillemin_of``) + poly.
    Gradient and Hessian are analytic.  Outside the closed polytope the
    Guillemin part is undefined; ``outside`` controls whether evaluation
    raises or returns +inf (useful inside maximizers).
    """

    def __init__(self, guillemin_of: DelzantPolytope | None = None,
                 poly: ScalarField | None = None, nvars: int | None = None):
        if guillemin_of is None and poly is None:
            raise ValueError("need a Guillemin part or a polynomial part")
        self.guillemin_of = guillemin_of
        self.poly = poly
        if nvars is None:
            nvars = guillemin_of.dim if guillemin_of is not None else poly.nvars
        self.nvars = nvars
        if poly is not None and poly.nvars != nvars:
            raise ValueError("polynomial part has wrong number of variables")

    @property
    def kind(self):
        if self.guillemin_of is None:
            return "poly"
        return "guillemin" if self.poly is None else "guillemin+poly"

    def __call__(self, points, outside: str = "raise"):
        pts = np.asarray(points, dtype=float)
        scalar_in = pts.ndim == 1
        P = np.atleast_2d(pts)
        out = np.zeros(P.shape[0])
        if self.guillemin_of is not None:
            l = self.guillemin_of.facet_values(P)
            bad = l < -1e-12 * (1.0 + np.abs(self.guillemin_of.offsets))
            bad_rows = bad.any(axis=1)
            if bad_rows.any() and outside == "raise":
                raise EvaluationOutsideClosure(
                    f"point {P[bad_rows][0]} outside the closed polytope")
            lc = np.maximum(l, 0.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                term = np.where(lc > 0.0, lc * np.log(np.maximum(lc, 1e-300)), 0.0)
            out += term.sum(axis=1)
            out[bad_rows] = np.inf
        if self.poly is not None:
            out = out + self.poly(P)
        return float(out[0]) if scalar_in else out

    def gradient(self, points, clamp: float | None = None):
        """Analytic gradient; ``clamp`` floors the facet values so boundary
        points yield a large finite inward-pointing gradient (used by the
        conjugate maximizer) instead of raising."""
        pts = np.asarray(points, dtype=float)
        scalar_in = pts.ndim == 1
        P = np.atleast_2d(pts)
        g = np.zeros_like(P)
        if self.guillemin_of is not None:
            l = self.guillemin_of.facet_values(P)
            if clamp is None:
                if np.any(l <= 0):
                    raise EvaluationOutsideClosure("gradient needs interior points")
            else:
                l = np.maximum(l, clamp)
            A = self.guillemin_of.normals.astype(float)
            g += (1.0 + np.log(l)) @ A
        if self.poly is not None:
            g = g + np.atleast_2d(self.poly.gradient(P))
        return g[0] if scalar_in else g

    def hessian(self, points):
        pts = np.asarray(points, dtype=float)
        scalar_in = pts.ndim == 1
        P = np.atleast_2d(pts)
        n = self.nvars
        H = np.zeros((P.shape[0], n, n))
        if self.guillemin_of is not None:
            l = self.guillemin_of.facet_values(P)
            if np.any(l <= 0):
                raise EvaluationOutsideClosure("Hessian needs interior points")
            A = self.guillemin_of.normals.astype(float)
            H += np.einsum("ki,ij,il->kjl", 1.0 / l, A, A)
        if self.poly is not None:
            for i in range(n):
                for j in range(n):
                    H[:, i, j] += self.poly.derivative(i).derivative(j)(P)
        return H[0] if scalar_in else H

    def __add__(self, other):
        if isinstance(other, ScalarField):
            poly = other if self.poly is None else self.poly + other
            return SmoothSymbolicFunction(self.guillemin_of, poly, self.nvars)
        if isinstance(other, SmoothSymbolicFunction):
            if self.guillemin_of is not None and other.guillemin_of is not None:
                raise ValueError("cannot add two Guillemin parts")
            g = self.guillemin_of or other.guillemin_of
            if self.poly is None:
                poly = other.poly
            elif other.poly is None:
                poly = self.poly
            else:
                poly = self.poly + other.poly
            return SmoothSymbolicFunction(g, poly, self.nvars)
        if np.isscalar(other):
            return self + ScalarField.constant(self.nvars, float(other))
        return NotImplemented

    def shifted_by_affine(self, g, c):
        corr = ScalarField.affine(self.nvars, -float(c), -np.asarray(g, dtype=float))
        return self + corr

    def to_dict(self):
        d = {"kind": self.kind}
        if self.poly is not None:
            d["poly"] = self.poly.to_dict()
        return d

    def __repr__(self):
        return f"SmoothSymbolicFunction(kind={self.kind!r}, nvars={self.nvars})"


def guillemin_potential(polytope: DelzantPolytope) -> SmoothSymbolicFunction:
    """The canonical potential sum_i l_i log l_i of the polytope."""
    return SmoothSymbolicFunction(guillemin_of=polytope)


# ---------------------------------------------------------------------------
# subdifferentials and normalization
# ---------------------------------------------------------------------------

def subdifferential(u, q, polytope: DelzantPolytope | None = None,
                    tol: float = 1e-9) -> np.ndarray:
    """Extreme points of the subdifferential of ``u`` at ``q``; shape (S, n).

    For PL functions these are the active-piece slopes; for grid functions the
    gradients of the simplices meeting ``q``; for smooth functions the single
    gradient.
    """
    q = np.asarray(q, dtype=float)
    if isinstance(u, PLConvexFunction):
        idx = u.active_indices(q, tol)
        return np.unique(np.round(u.slopes[idx], 12), axis=0)
    if isinstance(u, GridConvexFunction):
        mesh = u.mesh
        aug = np.concatenate([[1.0], q])
        grads = []
        for t in range(len(mesh.simplices)):
            lam = mesh.bary[t] @ aug
            if np.all(lam >= -1e-9):
                grads.append(mesh.grad_op[t] @ u.values[mesh.simplices[t]])
        if not grads:
            raise ValueError(f"point {q} outside the mesh")
        return np.unique(np.round(np.asarray(grads), 9), axis=0)
    if isinstance(u, SmoothSymbolicFunction):
        return np.atleast_2d(u.gradient(q))
    raise TypeError(f"unsupported representation {type(u)!r}")


def normalize_at(u, p, polytope: DelzantPolytope | None = None):
    """Subtract the supporting affine function at ``p`` (minimum-norm slope).

    The result is the same representation, nonnegative, and vanishes at p.
    """
    p = np.asarray(p, dtype=float)
    slopes = subdifferential(u, p, polytope)
    g = min_norm_point(slopes)
    up = u(p) if not isinstance(u, SmoothSymbolicFunction) else u(p)
    c = float(up) - float(g @ p)
    return u.shifted_by_affine(g, c)


# ---------------------------------------------------------------------------
# conjugates
# ---------------------------------------------------------------------------

def _pl_candidates(u: PLConvexFunction, polytope: DelzantPolytope):
    """Vertices of the linearity subdivision of a PL function on the polytope.

    The conjugate sup over the polytope is always attained on this finite set.
    """
    n = polytope.dim
    pts = [polytope.vertices]
    if n == 1:
        a, b = float(polytope.vertices.min()), float(polytope.vertices.max())
        pieces = pl_pieces_1d(u.slopes[:, 0], u.offsets, a, b)
        pts.append(np.asarray([[x0] for x0, _, _ in pieces[1:]]))
    elif n == 2:
        polygon = polygon_vertices(polytope)
        for region, _ in pl_regions_2d(u.slopes, u.offsets, polygon):
            pts.append(region)
    else:
        raise NotImplementedError("PL conjugates implemented for dimensions 1 and 2")
    W = np.vstack([p for p in pts if len(p)])
    W = np.unique(np.round(W, 12), axis=0)
    return W, u(W)


def _conjugate_candidates(u, polytope):
    if isinstance(u, PLConvexFunction):
        return _pl_candidates(u, polytope)
    if isinstance(u, GridConvexFunction):
        return u.mesh.vertices, u.values
    raise TypeError("candidates exist for PL and grid functions only")


@dataclass
class LegendreGrid:
    """Conjugate values on a regular grid over a box in slope space."""

    polytope: DelzantPolytope
    source: object
    axes: tuple                    # per-axis node arrays
    values: np.ndarray             # grid shape
    argmax: np.ndarray             # grid shape + (n,)
    spacing: np.ndarray            # per-axis spacing
    box_small: bool = False

    @property
    def nvars(self):
        return len(self.axes)

    @property
    def nodes(self) -> np.ndarray:
        grids = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def value_at(self, x):
        """Multilinear interpolation of the conjugate grid at ``x``."""
        x = np.asarray(x, dtype=float)
        scalar_in = x.ndim == 1
        X = np.atleast_2d(x)
        out = np.zeros(X.shape[0])
        idx = []
        frac = []
        for k, ax in enumerate(self.axes):
            t = (X[:, k] - ax[0]) / self.spacing[k]
            i = np.clip(np.floor(t).astype(int), 0, len(ax) - 2)
            idx.append(i)
            frac.append(t - i)
        if self.nvars == 1:
            i = idx[0]
            s = frac[0]
            out = (1 - s) * self.values[i] + s * self.values[i + 1]
        else:
            i, j = idx
            s, t = frac
            v = self.values
            out = ((1 - s) * (1 - t) * v[i, j] + s * (1 - t) * v[i + 1, j]
                   + (1 - s) * t * v[i, j + 1] + s * t * v[i + 1, j + 1])
        return float(out[0]) if scalar_in else out

    def biconjugate(self, points) -> np.ndarray:
        """Double transform via the grid: sup_x (<xi, x> - f(x)) over grid nodes."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        X = self.nodes
        F = self.values.ravel()
        vals = pts @ X.T - F
        out = vals.max(axis=1)
        return out[0] if np.asarray(points).ndim == 1 else out


def legendre_transform(u, polytope: DelzantPolytope, box, resolution: int,
                       tol: float = 1e-10) -> LegendreGrid:
    """Conjugate f(x) = sup over the closed polytope of <x, xi> - u(xi).

    ``box`` is (lo, hi) per axis; ``resolution`` is the number of grid nodes
    per axis.  PL and grid sources are maximized exactly over the finite
    candidate set of their linearity subdivision; smooth sources by projected
    gradient ascent with Armijo backtracking.
    """
    lo, hi = (np.asarray(b, dtype=float).ravel() for b in box)
    n = polytope.dim
    axes = tuple(np.linspace(lo[k], hi[k], resolution) for k in range(n))
    grids = np.meshgrid(*axes, indexing="ij")
    X = np.stack([g.ravel() for g in grids], axis=1)
    shape = grids[0].shape

    if isinstance(u, (PLConvexFunction, GridConvexFunction)):
        W, uW = _conjugate_candidates(u, polytope)
        scores = X @ W.T - uW
        best = scores.argmax(axis=1)
        values = scores[np.arange(len(X)), best]
        arg = W[best]
    elif isinstance(u, SmoothSymbolicFunction):
        def val(xi, members):
            return np.einsum("kj,kj->k", X[members], xi) - u(xi, outside="inf")

        def grad(xi, members):
            return X[members] - u.gradient(xi, clamp=1e-30)
        starts = np.repeat(polytope.center[None, :], len(X), axis=0)
        arg, values, conv, _ = projected_concave_ascent(val, grad, polytope, starts,
                                                        tol=tol)
        if not conv.all():
            # keep going with smaller tolerance demands; values are still lower bounds
            pass
    else:
        raise TypeError(f"unsupported representation {type(u)!r}")

    spacing = np.array([ax[1] - ax[0] for ax in axes])
    grid = LegendreGrid(polytope, u, axes, values.reshape(shape),
                        arg.reshape(shape + (n,)), spacing)
    boundary_mask = np.zeros(shape, dtype=bool)
    for k in range(n):
        sl = [slice(None)] * n
        sl[k] = 0
        boundary_mask[tuple(sl)] = True
        sl[k] = -1
        boundary_mask[tuple(sl)] = True
    barg = grid.argmax[boundary_mask]
    dist = polytope.facet_values(barg) / np.linalg.norm(
        polytope.normals.astype(float), axis=1)
    grid.box_small = bool(dist.min(axis=1).min() > 1e-5 * polytope.diameter)
    return grid


def conjugate_value(u, polytope: DelzantPolytope, x, tol: float = 1e-11):
    """Single conjugate value f(x) with its maximizer."""
    x = np.asarray(x, dtype=float)
    if isinstance(u, (PLConvexFunction, GridConvexFunction)):
        W, uW = _conjugate_candidates(u, polytope)
        scores = W @ x - uW
        k = int(np.argmax(scores))
        return float(scores[k]), W[k]
    if isinstance(u, SmoothSymbolicFunction):
        X = x[None, :]

        def val(xi, members):
            return np.einsum("kj,kj->k", X[members], xi) - u(xi, outside="inf")

        def grad(xi, members):
            return X[members] - u.gradient(xi, clamp=1e-30)
        arg, values, conv, _ = projected_concave_ascent(
            val, grad, polytope, polytope.center[None, :], tol=tol)
        return float(values[0]), arg[0]
    raise TypeError(f"unsupported representation {type(u)!r}")


# ---------------------------------------------------------------------------
# sections of the conjugate and normal images
# ---------------------------------------------------------------------------

@dataclass
class SublevelSection:
    """The set {x : f(x) <= h} of a conjugate grid, with boundary polyline."""

    grid: LegendreGrid
    h: float
    mask: np.ndarray
    boundary: np.ndarray    # (K, n) points approximating the level set

    @property
    def nvars(self):
        return self.grid.nvars


def section_sublevel(f: LegendreGrid, h: float, n_boundary: int = 256) -> SublevelSection:
    """Sublevel section of the conjugate through the origin slope.

    Requires f(0) = 0 (source normalized so its minimum pairs with the zero
    slope).  Raises NotCompact when the section touches the grid box.
    """
    n = f.nvars
    origin = np.zeros(n)
    f0 = f.value_at(origin)
    if abs(f0) > 1e-6 * (1.0 + abs(h)):
        raise ValueError(f"conjugate not normalized: f(0) = {f0:.3e}")
    if h < 0:
        raise ValueError("sublevel height must be nonnegative")
    mask = f.values <= h + 1e-12
    shape = f.values.shape
    edge = np.zeros(shape, dtype=bool)
    for k in range(n):
        sl = [slice(None)] * n
        sl[k] = 0
        edge[tuple(sl)] = True
        sl[k] = -1
        edge[tuple(sl)] = True
    if np.any(mask & edge):
        raise NotCompact("sublevel set reaches the grid box; enlarge the box")

    if n == 1:
        x = f.axes[0]
        v = f.values
        pts = []
        for k in range(len(x) - 1):
            d0, d1 = v[k] - h, v[k + 1] - h
            if d0 <= 0 <= d1 or d1 <= 0 <= d0:
                if d0 == d1:
                    continue
                t = d0 / (d0 - d1)
                pts.append([x[k] + t * (x[k + 1] - x[k])])
        boundary = np.asarray(pts) if pts else np.zeros((0, 1))
        if len(boundary) > 2:
            boundary = np.stack([boundary.min(axis=0), boundary.max(axis=0)])
    else:
        thetas = np.linspace(0.0, 2 * np.pi, n_boundary, endpoint=False)
        dirs = np.stack([np.cos(thetas), np.sin(thetas)], axis=1)
        pts = []
        t_max = min(ax[-1] - f.spacing[k] for k, ax in enumerate(f.axes))
        for d in dirs:
            lo_r, hi_r = 0.0, None
            # march outward until f > h, then bisect
            r = f.spacing.min()
            while r < 2 * t_max:
                if _inside_box(f, r * d) and f.value_at(r * d) <= h:
                    lo_r = r
                    r *= 1.6
                else:
                    hi_r = r
                    break
            if hi_r is None:
                raise NotCompact("sublevel ray escaped the box")
            for _ in range(60):
                mid = 0.5 * (lo_r + hi_r)
                if _inside_box(f, mid * d) and f.value_at(mid * d) <= h:
                    lo_r = mid
                else:
                    hi_r = mid
            pts.append(lo_r * d)
        boundary = np.asarray(pts)
    return SublevelSection(f, float(h), mask, boundary)


def _inside_box(f: LegendreGrid, x):
    return all(ax[0] - 1e-12 <= x[k] <= ax[-1] + 1e-12 for k, ax in enumerate(f.axes))


@dataclass
class RadialSet:
    """Star-shaped subset of the polytope as a radius function over directions."""

    origin: np.ndarray
    directions: np.ndarray      # (K, n)
    radii: np.ndarray           # (K,)
    boundary_radii: np.ndarray  # (K,) distance from origin to the boundary
    full_coverage: bool = False

    def radius_at(self, direction) -> float:
        """Radius interpolated at an arbitrary unit direction."""
        d = np.asarray(direction, dtype=float)
        if self.directions.shape[1] == 1:
            k = 0 if d[0] > 0 else 1
            return float(self.radii[k])
        theta = float(np.arctan2(d[1], d[0])) % (2 * np.pi)
        thetas = np.arctan2(self.directions[:, 1], self.directions[:, 0]) % (2 * np.pi)
        order = np.argsort(thetas)
        ts = thetas[order]
        rs = self.radii[order]
        k = int(np.searchsorted(ts, theta))
        t0, r0 = (ts[k - 1], rs[k - 1]) if k > 0 else (ts[-1] - 2 * np.pi, rs[-1])
        t1, r1 = (ts[k], rs[k]) if k < len(ts) else (ts[0] + 2 * np.pi, rs[0])
        if t1 == t0:
            return float(r0)
        w = (theta - t0) / (t1 - t0)
        return float((1 - w) * r0 + w * r1)


def _default_directions(n: int, n_rays: int | None):
    if n == 1:
        return np.array([[1.0], [-1.0]])
    K = n_rays or 720
    thetas = np.linspace(0.0, 2 * np.pi, K, endpoint=False)
    return np.stack([np.cos(thetas), np.sin(thetas)], axis=1)


def _min_conjugate_on_subdifferential(u, polytope, q):
    """min over the subdifferential at q of the conjugate value f(p).

    For p in Du(q) the Fenchel identity gives f(p) = <q, p> - u(q), linear in
    p, so the minimum is over the extreme slopes.
    """
    slopes = subdifferential(u, q, polytope)
    uq = u(q)
    return float((slopes @ q).min() - uq)


def normal_image(u, f, region, polytope: DelzantPolytope | None = None,
                 n_rays: int | None = None, tol: float = 1e-11) -> RadialSet:
    """Image of a conjugate sublevel region under the normal map, radially.

    ``region`` is a :class:`SublevelSection` (or a plain height h).  For each
    direction e the set meets the ray from the center in a segment of length
    r_e, found by bisection on the membership test
    min over Du(q) of f(p) <= h.
    """
    if isinstance(region, SublevelSection):
        h = region.h
        if polytope is None:
            polytope = region.grid.polytope
    else:
        h = float(region)
        if polytope is None:
            raise ValueError("polytope required when region is a bare height")
    o = polytope.center
    dirs = _default_directions(polytope.dim, n_rays)
    radii = np.zeros(len(dirs))
    R = np.zeros(len(dirs))
    for k, e in enumerate(dirs):
        Re, _, _ = ray_exit(polytope, e)
        R[k] = Re

        def inside(r):
            q = o + r * e
            return _min_conjugate_on_subdifferential(u, polytope, q) <= h + 1e-12
        if inside(Re * (1.0 - 1e-9)):
            radii[k] = Re
            continue
        lo_r, hi_r = 0.0, Re * (1.0 - 1e-9)
        for _ in range(80):
            mid = 0.5 * (lo_r + hi_r)
            if inside(mid):
                lo_r = mid
            else:
                hi_r = mid
            if hi_r - lo_r <= tol * max(1.0, Re):
                break
        radii[k] = lo_r
    full = bool(np.all(radii >= R * (1.0 - 1e-7)))
    return RadialSet(o.copy(), dirs, radii, R, full)


# ---------------------------------------------------------------------------
# truncation
# ---------------------------------------------------------------------------

def truncate(u, polytope: DelzantPolytope, h: float, n_rays: int | None = None,
             mesh: Mesh | None = None, resolution: float | None = None) -> GridConvexFunction:
    """Truncation of a normalized convex function at conjugate height h.

    Inside the normal image W_h of the sublevel section the result equals u;
    beyond it, along the ray through q1 on the boundary of W_h,
        u_h(xi) = u(q1) + (|q1 xi| / |o q1|) (u(q1) + h).
    The result carries ``.radial`` (the radius function of W_h) and
    ``.case1`` (True when W_h already covers the polytope, so u_h = u).
    """
    o = polytope.center
    u_at_o = u(o)
    if abs(u_at_o) > 1e-8:
        raise ValueError(f"u must be normalized at the center: u(o) = {u_at_o:.3e}")
    if h <= 0:
        raise ValueError("truncation height must be positive")
    if mesh is None:
        if resolution is None:
            resolution = polytope.diameter / 64
        mesh = fan_mesh(polytope, resolution)
    radial = normal_image(u, None, h, polytope, n_rays=n_rays)
    if radial.full_coverage:
        out = GridConvexFunction.from_callable(mesh, u, convex_tol=1e-8)
        out.radial = radial
        out.case1 = True
        return out

    vals = np.zeros(mesh.n_nodes)
    for k, xi in enumerate(mesh.vertices):
        d = xi - o
        rho = float(np.linalg.norm(d))
        if rho <= 1e-14:
            vals[k] = u_at_o
            continue
        e = d / rho
        r = radial.radius_at(e)
        if rho <= r + 1e-12:
            vals[k] = u(xi)
        else:
            q1 = o + r * e
            uq1 = u(q1)
            vals[k] = uq1 + ((rho - r) / r) * (uq1 + h)
    # ray interpolation can break hinge convexity at the angular-resolution
    # scale; certify with a tolerance tied to the direction grid
    K = len(radial.directions)
    angular_tol = max(HINGE_TOL, 50.0 * (2 * np.pi / max(K, 2)) ** 2)
    out = GridConvexFunction(mesh, vals, convex_tol=angular_tol, require_convex=False)
    out.radial = radial
    out.case1 = False
    return out


# ---------------------------------------------------------------------------
# lattice rounding
# ---------------------------------------------------------------------------

def round_to_filtration(u, polytope: DelzantPolytope, k: int) -> GridConvexFunction:
    """Largest convex function through the ceil-rounded lattice values.

    Values ceil(k u(alpha)) / k at lattice points alpha in (1/k) Z^n meeting
    the closed polytope; the result is their lower convex envelope, a rational
    PL convex function represented on its own triangulation of the lattice
    hull.  Requires the hull to fill the polytope (integral vertices).
    """
    if k < 1:
        raise ValueError("k must be a positive integer")
    n = polytope.dim
    lo = polytope.vertices.min(axis=0)
    hi = polytope.vertices.max(axis=0)
    ranges = [np.arange(ceil(lo[j] * k - 1e-9), np.floor(hi[j] * k + 1e-9) + 1)
              for j in range(n)]
    grids = np.meshgrid(*ranges, indexing="ij")
    alpha = np.stack([g.ravel() for g in grids], axis=1) / k
    inside = polytope.contains(alpha, tol=1e-9)
    alpha = alpha[inside]
    if len(alpha) < n + 1 or np.linalg.matrix_rank(alpha - alpha[0]) < n:
        raise EmptyLattice(f"lattice (1/{k})Z^{n} has too few points in the polytope")
    uvals = np.asarray([u(a) for a in alpha], dtype=float)
    # float guard: ku within 1e-9 of an integer counts as that integer
    yvals = np.ceil(k * uvals - 1e-9) / k

    if n == 1:
        order = np.argsort(alpha[:, 0])
        xs, ys = alpha[order, 0], yvals[order]
        hull = [(xs[0], ys[0])]
        for x, y in zip(xs[1:], ys[1:]):
            while len(hull) >= 2:
                (x1, y1), (x2, y2) = hull[-2], hull[-1]
                if (y2 - y1) * (x - x1) >= (y - y1) * (x2 - x1) - 1e-15:
                    hull.pop()
                else:
                    break
            hull.append((x, y))
        verts = np.asarray([[p[0]] for p in hull])
        vals = np.asarray([p[1] for p in hull])
        simplices = np.stack([np.arange(len(verts) - 1), np.arange(1, len(verts))], axis=1)
    else:
        verts, vals, simplices = _lower_envelope_2d(alpha, yvals)
    _check_hull_covers(polytope, verts)
    mesh = Mesh(polytope, verts, simplices)
    return GridConvexFunction(mesh, vals, convex_tol=1e-9)


def _lower_envelope_2d(alpha, yvals):
    from scipy.spatial import ConvexHull, Delaunay

    lifted = np.column_stack([alpha, yvals])
    rank = np.linalg.matrix_rank(lifted - lifted[0], tol=1e-12)
    if rank < 3:
        # affine data: envelope is the affine interpolant on the flat hull
        tri = Delaunay(alpha)
        return alpha, yvals, tri.simplices
    hull = ConvexHull(lifted, qhull_options="Qt")
    keep = hull.equations[:, 2] < -1e-12   # downward-facing facets
    faces = hull.simplices[keep]
    used = np.unique(faces)
    remap = -np.ones(len(alpha), dtype=int)
    remap[used] = np.arange(len(used))
    return alpha[used], yvals[used], remap[faces]


def _check_hull_covers(polytope, verts):
    for v in polytope.vertices:
        d = np.linalg.norm(verts - v, axis=1).min()
        if d > 1e-9 * (1.0 + polytope.diameter):
            raise EmptyLattice(
                "lattice hull does not reach the polytope vertices; "
                "rounding is only supported when the vertices are lattice points")

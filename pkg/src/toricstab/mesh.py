"""Conforming fan triangulations of a polytope and P1 finite-element data.

The mesh is the fixed carrier for grid convex functions and for the stability
linear programs: a fan from the polytope center over each facet, uniformly
subdivided so that refinements are nested (a level-m mesh is a submesh of the
level-2m mesh).  Nodes are constructed in exact rational arithmetic from the
exact vertex data so that shared nodes deduplicate reliably and lattice
points land exactly.

Everything a consumer needs is assembled once per mesh: per-simplex hat
gradients, hinge (gradient-jump) rows across interior faces, the P1 mass
matrix, affine moment rows, boundary rows against dsigma, and point location.
"""

from __future__ import annotations

from fractions import Fraction

import numpy as np
import scipy.sparse as sp

from .errors import MeshTooCoarse
from .quadrature import simplex_rule

__all__ = ["Mesh", "fan_mesh"]


class Mesh:
    """Simplicial mesh of a polytope with cached P1 operators."""

    def __init__(self, polytope, vertices, simplices, fan_level=None,
                 exact_vertices=None):
        self.polytope = polytope
        self.vertices = np.asarray(vertices, dtype=float)
        self.simplices = np.asarray(simplices, dtype=int)
        self.fan_level = fan_level
        self._exact_vertices = exact_vertices
        self.dim = self.vertices.shape[1]
        self._build_geometry()
        self._build_faces()
        self._hinge = None
        self._mass = None
        self._moments = None

    # -- construction helpers ------------------------------------------------
    def _build_geometry(self):
        n = self.dim
        V = self.vertices[self.simplices]                 # (M, n+1, n)
        E = V[:, 1:, :] - V[:, :1, :]                     # (M, n, n)
        det = np.linalg.det(E)
        self.volumes = np.abs(det) / np.prod(range(1, n + 1))
        if np.any(self.volumes <= 0):
            raise MeshTooCoarse("degenerate simplex in mesh")
        Einv = np.linalg.inv(E)                           # (M, n, n)
        # E g = (u_k - u_0) rows  =>  grad u|T = grad_op[T] @ u[simplices[T]]
        D = np.zeros((len(self.simplices), n, n + 1))
        D[:, :, 1:] = Einv
        D[:, :, 0] = -D[:, :, 1:].sum(axis=2)
        self.grad_op = D
        # barycentric matrices: lambda(x) = bary[T] @ [1, x]
        A = np.concatenate([np.ones((len(self.simplices), n + 1, 1)), V], axis=2)
        self.bary = np.linalg.inv(np.transpose(A, (0, 2, 1)))
        self.centroids = V.mean(axis=1)

    def _build_faces(self):
        faces = {}
        for t, simplex in enumerate(self.simplices):
            for drop in range(self.dim + 1):
                face = tuple(sorted(v for k, v in enumerate(simplex) if k != drop))
                faces.setdefault(face, []).append(t)
        interior, boundary = [], []
        for face, owners in sorted(faces.items()):
            if len(owners) == 2:
                interior.append((face, owners[0], owners[1]))
            elif len(owners) == 1:
                boundary.append((face, owners[0]))
            else:
                raise MeshTooCoarse(f"face {face} shared by {len(owners)} simplices")
        self.interior_faces = interior
        self._assign_boundary_faces(boundary)

    def _assign_boundary_faces(self, boundary):
        poly = self.polytope
        per_facet = [[] for _ in range(poly.n_facets)]
        for face, owner in boundary:
            pts = self.vertices[list(face)]
            vals = poly.facet_values(pts)       # (len(face), d)
            on = np.flatnonzero(np.abs(vals).max(axis=0) <= 1e-9 * (1 + np.abs(poly.offsets)))
            if on.size == 0:
                raise MeshTooCoarse(f"boundary face {face} lies on no facet")
            per_facet[int(on[0])].append((face, owner))
        self.boundary_faces = per_facet

    # -- derived operators -------------------------------------------------
    @property
    def n_nodes(self):
        return len(self.vertices)

    def gradients(self, values):
        """Per-simplex gradients of the P1 interpolant; shape (M, n)."""
        u = np.asarray(values, dtype=float)
        return np.einsum("tij,tj->ti", self.grad_op, u[self.simplices])

    def hinge_matrix(self) -> sp.csr_matrix:
        """Rows give the gradient jump across each interior face along its
        normal (from the first to the second owner); nonnegative rows
        characterize convexity of the P1 interpolant.  Rows are normalized."""
        if self._hinge is not None:
            return self._hinge
        n = self.dim
        rows, cols, data = [], [], []
        for r, (face, t1, t2) in enumerate(self.interior_faces):
            nu = self._face_normal(face, t1, t2)
            for tsign, t in ((-1.0, t1), (1.0, t2)):
                coeff = tsign * (nu @ self.grad_op[t])    # (n+1,)
                for k, v in enumerate(self.simplices[t]):
                    rows.append(r)
                    cols.append(v)
                    data.append(coeff[k])
        H = sp.csr_matrix((data, (rows, cols)), shape=(len(self.interior_faces), self.n_nodes))
        H.sum_duplicates()
        scale = np.sqrt(np.asarray(H.multiply(H).sum(axis=1)).ravel())
        H = sp.diags(1.0 / np.maximum(scale, 1e-300)) @ H
        self._hinge = H.tocsr()
        return self._hinge

    def _face_normal(self, face, t1, t2):
        n = self.dim
        if n == 1:
            nu = np.array([1.0])
        else:
            pts = self.vertices[list(face)]
            if n == 2:
                e = pts[1] - pts[0]
                nu = np.array([-e[1], e[0]])
            else:
                e1, e2 = pts[1] - pts[0], pts[2] - pts[0]
                nu = np.cross(e1, e2)
            nu = nu / np.linalg.norm(nu)
        if nu @ (self.centroids[t2] - self.centroids[t1]) < 0:
            nu = -nu
        return nu

    def hinge_jumps(self, values) -> np.ndarray:
        return self.hinge_matrix() @ np.asarray(values, dtype=float)

    def mass_matrix(self) -> sp.csr_matrix:
        """P1 mass matrix: u' M v = integral of (P1 u)(P1 v) d(mu); exact."""
        if self._mass is not None:
            return self._mass
        n = self.dim
        rows, cols, data = [], [], []
        base = 1.0 / ((n + 1) * (n + 2))
        for t, simplex in enumerate(self.simplices):
            w = self.volumes[t] * base
            for i, vi in enumerate(simplex):
                for j, vj in enumerate(simplex):
                    rows.append(vi)
                    cols.append(vj)
                    data.append(w * (2.0 if i == j else 1.0))
        M = sp.csr_matrix((data, (rows, cols)), shape=(self.n_nodes, self.n_nodes))
        M.sum_duplicates()
        self._mass = M
        return M

    def moment_rows(self) -> np.ndarray:
        """Rows r_k with r_k . u = integral of u * phi_k d(mu) for the affine
        basis phi = (1, xi_1, ..., xi_n); exact for P1 ``u``."""
        if self._moments is not None:
            return self._moments
        n = self.dim
        R = np.zeros((n + 1, self.n_nodes))
        for t, simplex in enumerate(self.simplices):
            vol = self.volumes[t]
            X = self.vertices[simplex]                    # (n+1, n)
            R[0, simplex] += vol / (n + 1)
            coef = vol / ((n + 1) * (n + 2))
            s = X.sum(axis=0)                             # (n,)
            for i, vi in enumerate(simplex):
                R[1:, vi] += coef * (s + X[i])
        self._moments = R
        return R

    def interior_load(self, F, order=None) -> np.ndarray:
        """Vector c with c . u = integral of F * (P1 u) d(mu), exact for
        polynomial ``F`` at the chosen order."""
        if order is None:
            order = F.degree + 2
        c = np.zeros(self.n_nodes)
        for t, simplex in enumerate(self.simplices):
            nodes, w = simplex_rule(self.vertices[simplex], order)
            lam = np.hstack([np.ones((len(nodes), 1)), nodes]) @ self.bary[t].T
            fw = F(nodes) * w
            c[simplex] += lam.T @ fw
        return c

    def boundary_load(self, D=None, order=None) -> np.ndarray:
        """Vector b with b . u = integral of (P1 u) * D d(sigma); D = 1 if None."""
        if order is None:
            order = 2 + (D.degree if D is not None else 0)
        b = np.zeros(self.n_nodes)
        poly = self.polytope
        for i, fl in enumerate(self.boundary_faces):
            dens = 1.0 if self.dim == 1 else 1.0 / np.linalg.norm(poly.normals[i].astype(float))
            for face, _ in fl:
                if self.dim == 1:
                    x = self.vertices[face[0]]
                    val = 1.0 if D is None else float(D(x))
                    b[face[0]] += dens * val
                    continue
                nodes, w = simplex_rule(self.vertices[list(face)], order)
                vals = w * (1.0 if D is None else D(nodes))
                # hat values along the face: barycentric within the face simplex
                pts = self.vertices[list(face)]
                if self.dim == 2:
                    t = np.linalg.norm(nodes - pts[0], axis=1) / np.linalg.norm(pts[1] - pts[0])
                    lam = np.stack([1 - t, t], axis=1)
                else:
                    E = pts[1:] - pts[0]
                    coords = np.linalg.lstsq(E.T, (nodes - pts[0]).T, rcond=None)[0].T
                    lam = np.hstack([1 - coords.sum(axis=1, keepdims=True), coords])
                for k, v in enumerate(face):
                    b[v] += dens * np.dot(vals, lam[:, k])
        return b

    # -- evaluation ----------------------------------------------------------
    def locate(self, points, tol: float = 1e-9):
        """Containing simplex and barycentric coordinates for each point.

        Deterministic: points on shared faces go to the lowest simplex index.
        Returns (simplex_idx (K,), bary (K, n+1)); index -1 if outside.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        K = pts.shape[0]
        idx = np.full(K, -1, dtype=int)
        bary = np.zeros((K, self.dim + 1))
        aug = np.hstack([np.ones((K, 1)), pts])
        todo = np.arange(K)
        for t in range(len(self.simplices)):
            if todo.size == 0:
                break
            lam = aug[todo] @ self.bary[t].T
            ok = (lam >= -tol).all(axis=1)
            hit = todo[ok]
            idx[hit] = t
            bary[hit] = lam[ok]
            todo = todo[~ok]
        return idx, bary

    def interpolate(self, values, points):
        """Evaluate the P1 interpolant of nodal ``values`` at ``points``."""
        pts = np.asarray(points, dtype=float)
        scalar_in = pts.ndim == 1
        idx, bary = self.locate(pts)
        if np.any(idx < 0):
            bad = np.atleast_2d(pts)[idx < 0][0]
            raise ValueError(f"point {bad} outside the mesh")
        u = np.asarray(values, dtype=float)
        out = np.einsum("kj,kj->k", bary, u[self.simplices[idx]])
        return float(out[0]) if scalar_in else out

    def node_index(self, point, tol: float = 1e-10):
        """Index of the mesh node at ``point``; None if no node matches."""
        d = np.linalg.norm(self.vertices - np.asarray(point, dtype=float), axis=1)
        k = int(np.argmin(d))
        return k if d[k] <= tol else None

    def refined(self) -> "Mesh":
        """Nested refinement (fan level doubled)."""
        if self.fan_level is None:
            raise ValueError("only fan meshes support nested refinement")
        return fan_mesh(self.polytope, m=2 * self.fan_level)

    def __repr__(self):
        return (f"Mesh(dim={self.dim}, nodes={self.n_nodes}, "
                f"simplices={len(self.simplices)}, fan_level={self.fan_level})")


def fan_mesh(polytope, target_h: float | None = None, m: int | None = None) -> Mesh:
    """Fan triangulation from the center, uniformly subdivided.

    ``m`` is the number of subdivisions of every fan simplex edge; when only
    ``target_h`` is given, m = ceil(longest fan edge / target_h).  Meshes with
    m and 2m are nested.
    """
    if m is None:
        if target_h is None or target_h <= 0:
            raise ValueError("need target_h > 0 or an explicit level m")
        longest = 0.0
        o = polytope.center
        for cyc in polytope.facet_vertices:
            pts = polytope.vertices[list(cyc)]
            longest = max(longest, np.linalg.norm(pts - o, axis=1).max())
            if polytope.dim == 2:
                longest = max(longest, np.linalg.norm(pts[1] - pts[0]))
        m = max(1, int(np.ceil(longest / target_h - 1e-12)))
    if polytope.dim > 2:
        raise NotImplementedError("fan meshes implemented for dimensions 1 and 2")

    o_exact = polytope._exact_center
    verts_exact = polytope._exact_vertices
    node_index: dict = {}
    coords: list = []

    def add(exact_pt):
        key = tuple(exact_pt)
        k = node_index.get(key)
        if k is None:
            k = len(coords)
            node_index[key] = k
            coords.append([float(c) for c in exact_pt])
        return k

    simplices = []
    if polytope.dim == 1:
        for cyc in polytope.facet_vertices:
            v = verts_exact[cyc[0]]
            prev = add(o_exact)
            for k in range(1, m + 1):
                t = Fraction(k, m)
                pt = tuple(oo + t * (vv - oo) for oo, vv in zip(o_exact, v))
                cur = add(pt)
                simplices.append((prev, cur))
                prev = cur
    else:
        for cyc in polytope.facet_vertices:
            w1 = verts_exact[cyc[0]]
            w2 = verts_exact[cyc[1]]
            grid = {}
            for b1 in range(m + 1):
                for b2 in range(m + 1 - b1):
                    b0 = m - b1 - b2
                    pt = tuple((b0 * oo + b1 * ww1 + b2 * ww2) / m
                               for oo, ww1, ww2 in zip(o_exact, w1, w2))
                    grid[(b1, b2)] = add(pt)
            for b1 in range(m):
                for b2 in range(m - b1):
                    simplices.append((grid[(b1, b2)], grid[(b1 + 1, b2)], grid[(b1, b2 + 1)]))
                    if b1 + b2 <= m - 2:
                        simplices.append((grid[(b1 + 1, b2)], grid[(b1 + 1, b2 + 1)],
                                          grid[(b1, b2 + 1)]))
    return Mesh(polytope, np.asarray(coords), np.asarray(simplices, dtype=int),
                fan_level=m, exact_vertices=tuple(node_index))

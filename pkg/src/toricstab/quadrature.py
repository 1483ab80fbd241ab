"""Quadrature rules on simplices with certified polynomial exactness.

Rules are built per simplex by collapsing a tensor Gauss-Legendre grid onto
the reference simplex (Duffy map).  The node count is chosen so that every
polynomial up to the requested total degree is integrated exactly, which is
what the facet/interior measures and the piecewise-exact functional
evaluations rely on.
"""

from __future__ import annotations

from functools import lru_cache
from math import factorial

import numpy as np

__all__ = [
    "simplex_rule",
    "segment_rule",
    "simplex_volume",
    "map_rule_to_simplex",
]


@lru_cache(maxsize=None)
def _gauss01(m: int):
    """Gauss-Legendre nodes/weights on [0, 1]; exact through degree 2m-1."""
    x, w = np.polynomial.legendre.leggauss(m)
    return (x + 1.0) / 2.0, w / 2.0


@lru_cache(maxsize=None)
def _reference_simplex_rule(dim: int, order: int):
    """Nodes/weights on the unit simplex {t_i >= 0, sum t_i <= 1}.

    Exact for all polynomials of total degree <= ``order``.  The Duffy map
    multiplies the integrand degree by at most ``dim`` in the first axes, so
    the 1-D point counts are padded accordingly.
    """
    if dim == 0:
        return np.zeros((1, 0)), np.ones(1)
    if dim == 1:
        x, w = _gauss01(max(1, (order + 2) // 2))
        return x[:, None], w
    if dim == 2:
        # x = s, y = t (1 - s); ds-degree <= order + 1 after the Jacobian.
        m_s = max(1, (order + 3) // 2)
        m_t = max(1, (order + 2) // 2)
        s, ws = _gauss01(m_s)
        t, wt = _gauss01(m_t)
        S, T = np.meshgrid(s, t, indexing="ij")
        WS, WT = np.meshgrid(ws, wt, indexing="ij")
        x = S
        y = T * (1.0 - S)
        w = WS * WT * (1.0 - S)
        return np.stack([x.ravel(), y.ravel()], axis=1), w.ravel()
    if dim == 3:
        # x = s, y = t(1-s), z = r(1-s)(1-t); Jacobian (1-s)^2 (1-t).
        m_s = max(1, (order + 4) // 2)
        m_t = max(1, (order + 3) // 2)
        m_r = max(1, (order + 2) // 2)
        s, ws = _gauss01(m_s)
        t, wt = _gauss01(m_t)
        r, wr = _gauss01(m_r)
        S, T, R = np.meshgrid(s, t, r, indexing="ij")
        WS, WT, WR = np.meshgrid(ws, wt, wr, indexing="ij")
        x = S
        y = T * (1.0 - S)
        z = R * (1.0 - S) * (1.0 - T)
        w = WS * WT * WR * (1.0 - S) ** 2 * (1.0 - T)
        return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1), w.ravel()
    raise NotImplementedError(f"simplex quadrature not implemented for dim {dim}")


def simplex_volume(vertices) -> float:
    """Euclidean volume of the simplex spanned by ``vertices`` ((d+1) x d)."""
    v = np.asarray(vertices, dtype=float)
    d = v.shape[1]
    if v.shape[0] != d + 1:
        raise ValueError("need d+1 vertices for a d-simplex")
    if d == 0:
        return 1.0
    return abs(np.linalg.det(v[1:] - v[0])) / factorial(d)


def simplex_rule(vertices, order: int):
    """Quadrature nodes/weights on an embedded simplex, exact to ``order``.

    ``vertices`` has shape (d+1, n) with d <= n: a d-simplex embedded in R^n.
    Weights integrate against d-dimensional Hausdorff (surface) measure.
    """
    v = np.asarray(vertices, dtype=float)
    d = v.shape[0] - 1
    ref_nodes, ref_w = _reference_simplex_rule(d, order)
    nodes = v[0] + ref_nodes @ (v[1:] - v[0])
    edges = v[1:] - v[0]
    if d == 0:
        measure = 1.0
    else:
        gram = edges @ edges.T
        measure = np.sqrt(max(np.linalg.det(gram), 0.0)) / factorial(d)
    # reference rule integrates to 1/d!; rescale so weights sum to the measure
    w = ref_w * (measure * factorial(d))
    return nodes, w


def segment_rule(p, q, order: int):
    """Gauss rule along the segment [p, q] against arclength."""
    return simplex_rule(np.stack([np.atleast_1d(p), np.atleast_1d(q)]), order)


def map_rule_to_simplex(vertices, order: int):
    """Alias of :func:`simplex_rule`; kept for readability at call sites."""
    return simplex_rule(vertices, order)

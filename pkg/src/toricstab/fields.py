"""Polynomial scalar fields on the moment polytope.

A :class:`ScalarField` is a finite polynomial in the moment coordinates,
stored as a multi-index -> coefficient map.  It is the common representation
for the target curvature A, the fibre-volume weight D, and the bundle offset
h_G, and it is what the CLI expression parser produces.
"""

from __future__ import annotations

import re
from fractions import Fraction

import numpy as np

from .errors import ParseError

__all__ = ["ScalarField", "parse_field"]


class ScalarField:
    """Polynomial on R^n given by a multi-index coefficient map.

    Parameters
    ----------
    nvars : int
        Number of coordinates.
    coeffs : dict
        Map from exponent tuples (length ``nvars``) to real coefficients.
        Zero coefficients are dropped.
    """

    def __init__(self, nvars: int, coeffs: dict):
        self.nvars = int(nvars)
        clean = {}
        for alpha, c in coeffs.items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.nvars or any(a < 0 for a in alpha):
                raise ValueError(f"bad multi-index {alpha} for nvars={nvars}")
            c = float(c)
            if c != 0.0:
                clean[alpha] = clean.get(alpha, 0.0) + c
        self.coeffs = {a: c for a, c in sorted(clean.items()) if c != 0.0}

    # -- constructors -----------------------------------------------------
    @classmethod
    def constant(cls, nvars: int, value: float) -> "ScalarField":
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def affine(cls, nvars: int, const: float, linear) -> "ScalarField":
        coeffs = {(0,) * nvars: const}
        for k, g in enumerate(np.atleast_1d(linear)):
            idx = tuple(1 if j == k else 0 for j in range(nvars))
            coeffs[idx] = float(g)
        return cls(nvars, coeffs)

    # -- basic queries -----------------------------------------------------
    @property
    def degree(self) -> int:
        if not self.coeffs:
            return 0
        return max(sum(a) for a in self.coeffs)

    def is_affine(self, tol: float = 0.0) -> bool:
        return all(sum(a) <= 1 or abs(c) <= tol for a, c in self.coeffs.items())

    def affine_parts(self):
        """Return (constant, linear coefficient vector) of the degree<=1 part."""
        const = self.coeffs.get((0,) * self.nvars, 0.0)
        lin = np.zeros(self.nvars)
        for k in range(self.nvars):
            idx = tuple(1 if j == k else 0 for j in range(self.nvars))
            lin[k] = self.coeffs.get(idx, 0.0)
        return const, lin

    # -- evaluation ----------------------------------------------------------
    def __call__(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        scalar_in = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[-1] != self.nvars:
            raise ValueError(f"points have {pts.shape[-1]} coords, field has {self.nvars}")
        out = np.zeros(pts.shape[:-1])
        for alpha, c in self.coeffs.items():
            term = np.full(pts.shape[:-1], c)
            for k, a in enumerate(alpha):
                if a:
                    term = term * pts[..., k] ** a
            out += term
        return out[0] if scalar_in else out

    # -- algebra ---------------------------------------------------------
    def __add__(self, other):
        other = self._coerce(other)
        coeffs = dict(self.coeffs)
        for a, c in other.coeffs.items():
            coeffs[a] = coeffs.get(a, 0.0) + c
        return ScalarField(self.nvars, coeffs)

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        return self + (-1.0) * self._coerce(other)

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if np.isscalar(other):
            return ScalarField(self.nvars, {a: c * other for a, c in self.coeffs.items()})
        other = self._coerce(other)
        coeffs = {}
        for a1, c1 in self.coeffs.items():
            for a2, c2 in other.coeffs.items():
                a = tuple(i + j for i, j in zip(a1, a2))
                coeffs[a] = coeffs.get(a, 0.0) + c1 * c2
        return ScalarField(self.nvars, coeffs)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return -1.0 * self

    def derivative(self, axis: int) -> "ScalarField":
        coeffs = {}
        for a, c in self.coeffs.items():
            if a[axis] == 0:
                continue
            b = list(a)
            b[axis] -= 1
            coeffs[tuple(b)] = coeffs.get(tuple(b), 0.0) + c * a[axis]
        return ScalarField(self.nvars, coeffs)

    def gradient(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.stack([self.derivative(k)(pts) for k in range(self.nvars)], axis=-1)
        return out[0] if np.asarray(points).ndim == 1 else out

    def _coerce(self, other) -> "ScalarField":
        if isinstance(other, ScalarField):
            if other.nvars != self.nvars:
                raise ValueError("mixed numbers of variables")
            return other
        if np.isscalar(other):
            return ScalarField.constant(self.nvars, float(other))
        raise TypeError(f"cannot combine ScalarField with {type(other)!r}")

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "kind": "poly",
            "nvars": self.nvars,
            "coeffs": {",".join(map(str, a)): c for a, c in self.coeffs.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScalarField":
        nvars = int(data["nvars"])
        coeffs = {}
        for key, c in data["coeffs"].items():
            alpha = tuple(int(s) for s in str(key).split(","))
            coeffs[alpha] = float(c)
        return cls(nvars, coeffs)

    def __repr__(self):
        if not self.coeffs:
            return "ScalarField(0)"
        names = _var_names(self.nvars)
        terms = []
        for a, c in self.coeffs.items():
            mono = "*".join(f"{names[k]}^{e}" if e > 1 else names[k]
                            for k, e in enumerate(a) if e)
            if mono:
                terms.append(f"{c:g}*{mono}")
            else:
                terms.append(f"{c:g}")
        return "ScalarField(" + " + ".join(terms) + ")"

    def __eq__(self, other):
        return (isinstance(other, ScalarField) and other.nvars == self.nvars
                and other.coeffs == self.coeffs)

    def __hash__(self):
        return hash((self.nvars, tuple(sorted(self.coeffs.items()))))


def _var_names(nvars):
    return ["x", "y", "z"][:nvars] if nvars <= 3 else [f"x{k+1}" for k in range(nvars)]


# ---------------------------------------------------------------------------
# Expression parser: polynomials in x, y, z (aliases x1/xi1, ...) with
# rational coefficients, +, -, *, /constant, ^ or ** powers, parentheses.
# ---------------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(\d+\.\d*|\.\d+|\d+)|([A-Za-z_][A-Za-z_0-9]*)|(\*\*|[-+*/^()]))")

_VAR_AXES = {"x": 0, "y": 1, "z": 2}
for _k in range(1, 4):
    _VAR_AXES[f"x{_k}"] = _k - 1
    _VAR_AXES[f"xi{_k}"] = _k - 1


def _tokenize(text):
    tokens, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            if text[pos:].strip():
                raise ParseError(f"unexpected character {text[pos]!r} in {text!r}")
            break
        num, ident, op = m.groups()
        if num is not None:
            tokens.append(("num", Fraction(num)))
        elif ident is not None:
            tokens.append(("ident", ident))
        else:
            tokens.append(("op", "^" if op == "**" else op))
        pos = m.end()
    tokens.append(("end", None))
    return tokens


class _Parser:
    """Recursive-descent parser producing exponent->Fraction maps."""

    def __init__(self, tokens, nvars, params):
        self.tokens = tokens
        self.pos = 0
        self.nvars = nvars
        self.params = params

    def peek(self):
        return self.tokens[self.pos]

    def take(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op):
        kind, val = self.take()
        if kind != "op" or val != op:
            raise ParseError(f"expected {op!r}, found {val!r}")

    def parse(self):
        poly = self.expr()
        if self.peek()[0] != "end":
            raise ParseError(f"trailing input near {self.peek()[1]!r}")
        return poly

    def expr(self):
        poly = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            _, op = self.take()
            rhs = self.term()
            poly = _padd(poly, rhs if op == "+" else _pscale(rhs, -1))
        return poly

    def term(self):
        poly = self.unary()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            _, op = self.take()
            rhs = self.unary()
            if op == "*":
                poly = _pmul(poly, rhs, self.nvars)
            else:
                const = _as_constant(rhs, self.nvars)
                if const == 0:
                    raise ParseError("division by zero")
                poly = _pscale(poly, Fraction(1, 1) / const)
        return poly

    def unary(self):
        sign = 1
        while self.peek() in (("op", "-"), ("op", "+")):
            _, op = self.take()
            if op == "-":
                sign = -sign
        poly = self.power()
        return _pscale(poly, sign) if sign < 0 else poly

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            kind, val = self.take()
            neg = False
            if (kind, val) == ("op", "-"):
                neg = True
                kind, val = self.take()
            if kind != "num" or val.denominator != 1 or neg:
                raise ParseError("exponent must be a nonnegative integer")
            out = {(0,) * self.nvars: Fraction(1)}
            for _ in range(int(val)):
                out = _pmul(out, base, self.nvars)
            return out
        return base

    def atom(self):
        kind, val = self.take()
        if kind == "num":
            return {(0,) * self.nvars: val}
        if kind == "ident":
            if val in _VAR_AXES:
                axis = _VAR_AXES[val]
                if axis >= self.nvars:
                    raise ParseError(f"variable {val!r} exceeds {self.nvars} coordinates")
                idx = tuple(1 if j == axis else 0 for j in range(self.nvars))
                return {idx: Fraction(1)}
            if val in self.params:
                return {(0,) * self.nvars: Fraction(self.params[val]).limit_denominator(10**12)}
            raise ParseError(f"unknown identifier {val!r}")
        if (kind, val) == ("op", "("):
            poly = self.expr()
            self.expect_op(")")
            return poly
        raise ParseError(f"unexpected token {val!r}")


def _padd(p, q):
    out = dict(p)
    for a, c in q.items():
        out[a] = out.get(a, Fraction(0)) + c
    return out


def _pscale(p, s):
    return {a: c * s for a, c in p.items()}


def _pmul(p, q, nvars):
    out = {}
    for a1, c1 in p.items():
        for a2, c2 in q.items():
            a = tuple(i + j for i, j in zip(a1, a2))
            out[a] = out.get(a, Fraction(0)) + c1 * c2
    return out


def _as_constant(p, nvars):
    zero = (0,) * nvars
    if any(a != zero and c != 0 for a, c in p.items()):
        raise ParseError("division only by constants")
    return p.get(zero, Fraction(0))


def parse_field(text: str, nvars: int, params: dict | None = None) -> ScalarField:
    """Parse a polynomial expression into a :class:`ScalarField`.

    Variables are ``x, y, z`` with aliases ``x1/x2/x3`` and ``xi1/xi2/xi3``.
    ``params`` supplies values for any other identifiers (used by sweeps).
    """
    if not isinstance(text, str) or not text.strip():
        raise ParseError("empty field expression")
    parser = _Parser(_tokenize(text), nvars, dict(params or {}))
    poly = parser.parse()
    return ScalarField(nvars, {a: float(c) for a, c in poly.items()})

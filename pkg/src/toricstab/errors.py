"""Exception types shared across the toolkit."""


class ToricStabError(Exception):
    """Base class for all toolkit errors."""


class NotBounded(ToricStabError):
    """The facet system describes an unbounded region."""


class NotDelzant(ToricStabError):
    """The polytope violates the Delzant smoothness condition."""


class EmptyInterior(ToricStabError):
    """The facet system has no full-dimensional interior."""


class NonpositiveWeight(ToricStabError):
    """A density that must be positive on the closed polytope is not."""


class EvaluationOutsideClosure(ToricStabError):
    """A function on the closed polytope was evaluated outside it."""


class BoxTooSmall(ToricStabError):
    """The conjugate grid box under-resolves the gradient image."""


class NotCompact(ToricStabError):
    """A sublevel set escapes the grid box; enlarge the box."""


class FullCoverage(ToricStabError):
    """The normal image already covers the whole polytope (bounded-gradient case)."""


class EmptyLattice(ToricStabError):
    """Too few lattice points to define a rounded convex function."""


class DegenerateMomentMatrix(ToricStabError):
    """Affine moment system is singular (cannot happen for full-dimensional polytopes)."""


class AffineInput(ToricStabError):
    """An operation that needs a non-affine function received an affine one."""


class LPUnbounded(ToricStabError):
    """Linear program is unbounded."""


class LPInfeasible(ToricStabError):
    """Linear program is infeasible."""


class MeshTooCoarse(ToricStabError):
    """The triangulation is too coarse for the requested computation."""


class NotStrictlyConvex(ToricStabError):
    """A Hessian that must be positive definite is not."""


class GridTooCoarse(ToricStabError):
    """Finite-difference grid too coarse (boundary collar covers the interior)."""


class Unbalanced(ToricStabError):
    """Target curvature fails the affine compatibility (balancing) conditions."""


class Infeasible(ToricStabError):
    """No solution exists; carries a destabilization certificate when available.

    Attributes
    ----------
    certificate : object
        Problem-specific witness, e.g. the interior region where the inverse
        Hessian density is nonpositive.
    """

    def __init__(self, message, certificate=None):
        super().__init__(message)
        self.certificate = certificate


class NewtonStalled(ToricStabError):
    """Damped Newton could not reduce the residual; carries the failing path time."""

    def __init__(self, message, t_star=None, history=None):
        super().__init__(message)
        self.t_star = t_star
        self.history = history or []


class NotConverged(ToricStabError):
    """Iterative solver hit its iteration cap before meeting tolerance."""


class InfeasibleStart(ToricStabError):
    """Internal assertion: projection produced an infeasible starting point."""


class TOutOfRange(ToricStabError, ValueError):
    """Continuity-path parameter outside [0, 1]."""


class ParseError(ToricStabError, ValueError):
    """Malformed expression or file content."""


class ValidationError(ToricStabError, ValueError):
    """A job or file fails validation; message names the offending field."""

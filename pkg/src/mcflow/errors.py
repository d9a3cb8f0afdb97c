"""Exception types shared across the package."""


class FlowError(Exception):
    """Base class for all solver errors."""


class UnresolvedShape(FlowError):
    """The grid is too coarse to resolve the zero set (multiple crossings
    detected inside a single grid cell)."""


class ConvergenceFailure(FlowError):
    """Root refinement did not reach the requested tolerance."""


class InsufficientStencil(FlowError):
    """Not enough in-component nodes to build a local polynomial fit."""


class SurfaceLost(FlowError):
    """No control points remain after reseeding; the surface has shrunk
    below grid resolution.  Signals normal termination of a shrinking flow."""


class SingularSystem(FlowError):
    """A per-component linear system could not be solved."""


class IterationLimit(FlowError):
    """An iterative linear solve hit its iteration cap before reaching
    the requested residual tolerance."""


class NoDonor(FlowError):
    """A boundary control point could not be matched against any component
    of another axis (threshold angle too small or grid too coarse)."""


class SchwarzStagnation(UserWarning):
    """The Schwarz iteration hit its sweep cap with the boundary-value
    residual still above tolerance.  Issued as a warning; the last iterate
    is returned."""


class DegenerateCurve(FlowError):
    """Adjacent markers of the explicit scheme have (numerically) collided."""


class StepBudgetExceeded(FlowError):
    """The explicit scheme exceeded its step budget before reaching the
    requested final time."""


class EmptyReference(FlowError):
    """The reference point cloud for error measurement is empty."""


class NonPositiveError(FlowError):
    """A convergence-order computation received a non-positive error value."""


class TimeGridMismatch(FlowError):
    """Two runs being compared share no common snapshot times."""


class ConfigError(FlowError):
    """Invalid run configuration."""

"""Mean curvature flow on a Cartesian grid with overlapping height fields.

A closed curve (2D) or surface (3D) is represented by its intersections with
grid lines, grouped into single-valued height-field components per axis, and
advanced with a semi-implicit scheme whose subsets are stepped alternately
(ADI) or iterated to coupling (Schwarz).  An explicit Lagrangian marker
scheme serves as the cost and stability baseline in 2D.
"""

from .baseline import MarkerCurve, explicit_step, run_to
from .coupling import SweepPlan, adi_step, boundary_values, schwarz_step
from .diagnostics import (DiagRecord, ErrorReport, convergence_order,
                          error_vs_exact, error_vs_reference, measure)
from .errors import (ConfigError, ConvergenceFailure, DegenerateCurve,
                     EmptyReference, FlowError, InsufficientStencil,
                     IterationLimit, NoDonor, NonPositiveError,
                     SchwarzStagnation, SingularSystem, StepBudgetExceeded,
                     SurfaceLost, TimeGridMismatch, UnresolvedShape)
from .evolve import Coeffs3D, StepParams, coeffs3d, step2d, step3d
from .geometry import (Grid, Shape, eval_implicit, level_set_shape, make_shape,
                       seed_intersections, shape_kinds)
from .patchset import (ControlPoint, DecompositionParams, PatchComponent,
                       PatchSet, build_components, classify_axes,
                       evaluate_normal, interpolate_height, pou_axis, reseed)
from .points import PointSet

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"

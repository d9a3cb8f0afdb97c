"""Explicit Lagrangian marker scheme for 2D curves (cost/stability baseline).

Markers are seeded uniformly in the curve parameter and advanced by forward
Euler with central differences in the parameter; the time step follows the
stability rule dt = 0.8 (min marker spacing)^2, which shrinks as the curve
shortens and the markers crowd -- the behavior the comparison demonstrates.
No remeshing or redistribution is applied.
"""

from __future__ import annotations

import time as _time

import numpy as np

from .errors import DegenerateCurve, StepBudgetExceeded

_STEP_BUDGET = 10 ** 8
_MIN_SPACING = 1e-14
# Forward Euler with central differences is von Neumann stable up to
# dt = (min spacing)^2 / 2; the adaptive rule takes 0.8 of that limit.
# (Running at 0.8 * spacing^2 outright is unstable: the sawtooth mode
# grows, spacings collapse, and the adaptive dt stalls the run.)
_STABILITY_FRACTION = 0.8


def stable_dt(curve):
    """Adaptive explicit step size: 0.8 of the stability limit."""
    ds_min = float(curve.spacings().min())
    return _STABILITY_FRACTION * 0.5 * ds_min * ds_min


class MarkerCurve:
    """Closed marker polygon (m, 2), uniformly parameterized at t = 0."""

    def __init__(self, markers):
        markers = np.asarray(markers, dtype=float)
        if markers.ndim != 2 or markers.shape[1] != 2:
            raise ValueError("markers must have shape (m, 2)")
        if len(markers) < 8:
            raise ValueError("need at least 8 markers")
        self.markers = markers

    @classmethod
    def from_shape(cls, shape, m):
        """Uniform-parameter markers on a parametric catalog shape."""
        theta = np.linspace(0.0, 2.0 * np.pi, m, endpoint=False)
        return cls(shape.parametric(theta))

    @property
    def m(self):
        return len(self.markers)

    def spacings(self):
        d = self.markers - np.roll(self.markers, 1, axis=0)
        return np.hypot(d[:, 0], d[:, 1])

    def enclosed_area(self):
        x, y = self.markers[:, 0], self.markers[:, 1]
        xn, yn = np.roll(x, -1), np.roll(y, -1)
        return 0.5 * float(np.abs(np.sum(x * yn - xn * y)))

    def length(self):
        return float(self.spacings().sum())


def _velocity(markers):
    """Curvature-flow marker velocity from central parameter differences."""
    m = len(markers)
    h = 2.0 * np.pi / m
    p_next = np.roll(markers, -1, axis=0)
    p_prev = np.roll(markers, 1, axis=0)
    d1 = (p_next - p_prev) / (2.0 * h)
    d2 = (p_next - 2.0 * markers + p_prev) / (h * h)
    cross = d1[:, 0] * d2[:, 1] - d2[:, 0] * d1[:, 1]
    speed2 = d1[:, 0] ** 2 + d1[:, 1] ** 2
    coef = -cross / speed2 ** 2
    return np.stack([coef * d1[:, 1], -coef * d1[:, 0]], axis=1)


def discrete_normal(curve):
    """Outward unit normal at each marker (counterclockwise curves)."""
    m = curve.m
    h = 2.0 * np.pi / m
    d1 = (np.roll(curve.markers, -1, axis=0) - np.roll(curve.markers, 1, axis=0)) / (2.0 * h)
    speed = np.hypot(d1[:, 0], d1[:, 1])
    return np.stack([d1[:, 1] / speed, -d1[:, 0] / speed], axis=1)


def explicit_step(curve, dt=None):
    """One forward-Euler step; returns (new curve, dt used).

    dt defaults to the adaptive stability rule (see stable_dt); passing a
    fixed dt bypasses the rule (used to demonstrate the blow-up).
    Raises DegenerateCurve when adjacent markers have collided.
    """
    if float(curve.spacings().min()) < _MIN_SPACING:
        raise DegenerateCurve("marker spacing collapsed below 1e-14")
    dt_used = stable_dt(curve) if dt is None else float(dt)
    new = curve.markers + dt_used * _velocity(curve.markers)
    return MarkerCurve(new), dt_used


def run_to(curve, t_end):
    """Advance with adaptive steps until exactly t_end.

    Returns (curve, steps, wall_seconds); the final step is truncated to
    land on t_end.  Raises StepBudgetExceeded past 1e8 steps (the adaptive
    dt keeps shrinking as the curve shortens).
    """
    if t_end < 0:
        raise ValueError("t_end must be nonnegative")
    t = 0.0
    steps = 0
    t0 = _time.perf_counter()
    markers = curve.markers
    while t < t_end - 1e-15:
        if steps >= _STEP_BUDGET:
            raise StepBudgetExceeded(f"exceeded {_STEP_BUDGET} steps at t={t:.3e}")
        d = markers - np.roll(markers, 1, axis=0)
        ds_min = float(np.hypot(d[:, 0], d[:, 1]).min())
        if ds_min < _MIN_SPACING:
            raise DegenerateCurve("marker spacing collapsed below 1e-14")
        dt = min(_STABILITY_FRACTION * 0.5 * ds_min * ds_min, t_end - t)
        markers = markers + dt * _velocity(markers)
        t += dt
        steps += 1
    return MarkerCurve(markers), steps, _time.perf_counter() - t0


def snapshot_csv(curve, path):
    """Snapshot in the control-point CSV layout (axis/component sentinel 0)."""
    nrm = discrete_normal(curve)
    rows = ["x,y,axis,component,nx,ny"]
    for p, n in zip(curve.markers, nrm):
        rows.append(f"{p[0]:.17g},{p[1]:.17g},0,0,{n[0]:.17g},{n[1]:.17g}")
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")

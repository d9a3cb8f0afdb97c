"""Geometric observables, error norms, and convergence orders.

Length/area and enclosed area/volume are computed by partition-of-unity
quadrature over the control points: each node counts only for its dominant
normal axis, weighted by the graph metric, so no global point ordering or
surface stitching is required.  Error norms follow the projection (exact
shapes) or nearest-neighbor (reference clouds) conventions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyReference, NonPositiveError


@dataclass
class DiagRecord:
    """Per-snapshot observables of the evolving surface."""

    t: float
    length_or_area: float
    enclosed: float
    point_count: int
    wall_ms: float = 0.0


@dataclass
class ErrorReport:
    """Position-error norms against an exact or reference solution."""

    e_inf: float
    e_l2: float
    n_points: int


def _component_quadrature(comp):
    """Per-node (chi, metric weight, x . dA) contributions of one component.

    Slopes come from central differences of the heights where both row
    neighbors exist, one-sided differences otherwise.  chi marks nodes whose
    dominant normal axis is the component's own axis.
    """
    locs = comp.node_locals()
    nrm = comp.normals_at(locs)
    chi = np.argmax(np.abs(nrm), axis=1) == comp.axis
    if not chi.any():
        return 0.0, 0.0

    locs = locs[chi]
    h = comp.grid.h
    w = comp.heights
    m = comp.mask
    nbase = comp.dim - 1
    grads = np.empty((len(locs), nbase))
    for k in range(nbase):
        step = np.zeros(nbase, dtype=np.int64)
        step[k] = 1
        up = locs + step
        dn = locs - step
        if comp.dim == 2:
            has_up, has_dn = m[up[:, 0]], m[dn[:, 0]]
            w_up = np.where(has_up, w[up[:, 0]], 0.0)
            w_dn = np.where(has_dn, w[dn[:, 0]], 0.0)
            w_0 = w[locs[:, 0]]
        else:
            has_up = m[up[:, 0], up[:, 1]]
            has_dn = m[dn[:, 0], dn[:, 1]]
            w_up = np.where(has_up, w[up[:, 0], up[:, 1]], 0.0)
            w_dn = np.where(has_dn, w[dn[:, 0], dn[:, 1]], 0.0)
            w_0 = w[locs[:, 0], locs[:, 1]]
        central = has_up & has_dn
        grads[:, k] = np.where(
            central, (w_up - w_dn) / (2.0 * h),
            np.where(has_up, (w_up - w_0) / h,
                     np.where(has_dn, (w_0 - w_dn) / h, 0.0)))

    metric = np.sqrt(1.0 + (grads ** 2).sum(axis=1))
    weight = h ** nbase
    measure = metric.sum() * weight

    # x . (vector area element): n * metric = orient * (-grad, 1) embedded
    pos = comp.positions(locs)
    nvec = np.empty_like(pos)
    nvec[:, list(comp.base)] = -grads
    nvec[:, comp.axis] = 1.0
    flux = comp.orient * (pos * nvec).sum(axis=1).sum() * weight
    return measure, flux


def measure(patchset, t=0.0, wall_ms=0.0):
    """Length (2D) / area (3D) and enclosed area/volume of the surface.

    Uses the indicator partition of unity (dominant normal axis) to weight
    each control point once, the graph metric sqrt(1 + |grad w|^2) for the
    surface measure, and the divergence theorem (1/d) sum x . n dS for the
    enclosed measure.
    """
    total = 0.0
    flux = 0.0
    for comp in patchset.components:
        mm, ff = _component_quadrature(comp)
        total += mm
        flux += ff
    return DiagRecord(
        t=t, length_or_area=total, enclosed=flux / patchset.dim,
        point_count=patchset.n_points, wall_ms=wall_ms,
    )


def error_vs_exact(patchset, exact, t):
    """Error norms against the shrinking circle/sphere of radius sqrt(1-2t)."""
    if exact not in ("circle", "sphere"):
        raise ValueError("exact must be 'circle' or 'sphere'")
    if t >= 0.5:
        raise ValueError("exact solution vanished at t = 0.5")
    radius = np.sqrt(1.0 - 2.0 * t)
    pos, _ = patchset.all_points()
    e = np.abs(np.linalg.norm(pos, axis=1) - radius)
    return ErrorReport(
        e_inf=float(e.max()), e_l2=float(np.sqrt((e ** 2).mean())),
        n_points=len(e),
    )


def error_vs_reference(patchset, reference):
    """Error norms as nearest-neighbor distances to a reference point cloud."""
    reference = np.asarray(reference, dtype=float)
    if reference.size == 0:
        raise EmptyReference("reference point cloud is empty")
    pos, _ = patchset.all_points()
    dist, _ = cKDTree(reference).query(pos)
    return ErrorReport(
        e_inf=float(dist.max()), e_l2=float(np.sqrt((dist ** 2).mean())),
        n_points=len(dist),
    )


def convergence_order(errors):
    """Orders log2(e_k / e_{k+1}) for a list of (N, e) with N doubling."""
    if len(errors) < 2:
        return []
    orders = []
    for (n0, e0), (n1, e1) in zip(errors, errors[1:]):
        if n1 != 2 * n0:
            raise ValueError(f"N must double between entries, got {n0} -> {n1}")
        if e0 <= 0 or e1 <= 0:
            raise NonPositiveError("errors must be positive to fit an order")
        orders.append(float(np.log2(e0 / e1)))
    return orders


def fitted_order(errors):
    """Least-squares slope of log2(e) against log2(1/N)."""
    n = np.array([float(k) for k, _ in errors])
    e = np.array([float(v) for _, v in errors])
    if np.any(e <= 0):
        raise NonPositiveError("errors must be positive to fit an order")
    return float(np.polyfit(np.log2(1.0 / n), np.log2(e), 1)[0])

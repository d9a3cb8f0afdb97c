"""One global time step: boundary matching plus the alternating sweep.

A boundary control point of an axis-r component slides along its grid line;
its new height is where that line pierces the height surface of a component
of another axis (the donor), found by the same row-wise parabola solve used
for reseeding.  The ADI step sweeps the axes once in order, each axis seeing
the newest donor heights; the Schwarz step repeats such sweeps inside one
time level until the boundary values settle, and reduces to the ADI step
when capped at a single iteration.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NoDonor, SchwarzStagnation
from .evolve import step2d, step3d
from .patchset import base_dims, reseed


@dataclass
class SweepPlan:
    """Axis ordering and coupling mode of the global step."""

    order: tuple = (0, 1)
    mode: str = "adi"
    schwarz_tol: float = 1e-10
    schwarz_max_iters: int = 50

    def __post_init__(self):
        if self.mode not in ("adi", "schwarz"):
            raise ValueError("mode must be 'adi' or 'schwarz'")
        if self.schwarz_max_iters < 1:
            raise ValueError("schwarz_max_iters must be at least 1")

    @classmethod
    def for_dim(cls, dim, mode="adi", **kw):
        return cls(order=tuple(range(dim)), mode=mode, **kw)

    def validate(self, dim):
        if sorted(self.order) != list(range(dim)):
            raise ValueError(f"order must cover each axis exactly once, got {self.order}")


def _donor_heights(comp, use_newest):
    if use_newest:
        return comp.heights
    prev = getattr(comp, "heights_prev", None)
    return comp.heights if prev is None else prev


def _match_boundary(target, patchset, use_newest):
    """Matching-condition heights for the target's boundary nodes.

    Returns (values, found) aligned with target.boundary_locals().  For each
    boundary point the donor axis is the dominant remaining normal direction;
    among that axis's components the crossing nearest to the point's current
    position wins, subject to an outward-normal hemisphere check (guards
    against picking the opposite sheet).  Falls back to the other axes in
    order of normal dominance.  Donor interpolation anchors on interior
    (scheme-solved) nodes only: matched boundary data referencing other
    matched boundary data couples the subsets' errors to each other, which
    destabilizes the corners where three fringes meet.
    """
    grid = target.grid
    d = grid.dim
    r = target.axis
    blocs = target.boundary_locals()
    nb = len(blocs)
    values = np.full(nb, np.nan)
    found = np.zeros(nb, dtype=bool)
    if nb == 0:
        return values, found

    gidx = blocs + target.origin
    cur = target.heights_at(blocs)
    normals = target.normals_at(blocs)
    tb = base_dims(r, d)
    others = [j for j in range(d) if j != r]
    score = np.abs(normals[:, others])
    pref_order = np.argsort(-score, axis=1)
    dist_cap = patchset.params.d0

    for pref in range(len(others)):
        axis_choice = np.asarray(others)[pref_order[:, pref]]
        for j in set(axis_choice.tolist()):
            sel = np.nonzero(~found & (axis_choice == j))[0]
            if len(sel) == 0:
                continue
            level = grid.lo[j] + grid.h * gidx[sel, tb.index(j)]
            approx = cur[sel]
            best = np.full(len(sel), np.inf)
            best_val = np.full(len(sel), np.nan)
            for donor in patchset.components_of(j):
                heights = _donor_heights(donor, use_newest)
                s_lo, s_hi, pos_scan = donor.scan_range(r)
                hb_lo, hb_hi = donor.height_bounds()
                pad = max(dist_cap, 3 * grid.h)
                near = ((level >= hb_lo - pad) & (level <= hb_hi + pad)
                        & (approx >= s_lo - pad) & (approx <= s_hi + pad))
                if d == 3:
                    k = next(dd for dd in range(3) if dd not in (r, j))
                    rows = gidx[sel, tb.index(k)] - donor.origin[1 - pos_scan]
                    near &= (rows >= 0) & (rows < donor.mask.shape[1 - pos_scan])
                else:
                    rows = None
                if not near.any():
                    continue
                q = np.nonzero(near)[0]
                ok, coord, anchor_n = donor.crossing_near(
                    r, None if rows is None else rows[q],
                    level[q], approx[q], window=4, heights=heights,
                    interior_only=True)
                hemi = (anchor_n * normals[sel[q]]).sum(axis=1) > 0.0
                dist = np.abs(coord - approx[q])
                good = ok & hemi & (dist < dist_cap) & (dist < best[q])
                best[q] = np.where(good, dist, best[q])
                best_val[q] = np.where(good, coord, best_val[q])
            hit = np.isfinite(best_val)
            values[sel[hit]] = best_val[hit]
            found[sel[hit]] = True
        if found.all():
            break
    return values, found


def boundary_values_arrays(target, patchset, use_newest=True):
    """Matching-condition heights aligned with target.boundary_locals().

    Raises NoDonor when a boundary node cannot be matched against any
    other-axis component.
    """
    values, found = _match_boundary(target, patchset, use_newest)
    if not found.all():
        gidx = target.boundary_locals() + target.origin
        miss = np.nonzero(~found)[0][0]
        raise NoDonor(
            f"no donor for boundary node {tuple(gidx[miss])} of axis-"
            f"{target.axis} component {target.comp_id} "
            "(alpha too small or grid too coarse)"
        )
    return values


def boundary_values(target, patchset, use_newest=True):
    """Dict form of the matching condition: {global base index: height}."""
    vals = boundary_values_arrays(target, patchset, use_newest)
    keys = []
    for loc in target.boundary_locals():
        g = tuple(int(v) for v in (loc + target.origin))
        keys.append(g[0] if len(g) == 1 else g)
    return dict(zip(keys, vals))


def _sweep_until(patchset, params, order, max_sweeps, tol):
    """Run coupled sweeps in one time level; returns (patchset, info)."""
    ps = patchset.copy()
    for comp in ps.components:
        comp.heights_prev = comp.heights  # frozen time-n reference

    prev_bv = None
    residual = np.inf
    history = []
    sweeps_done = 0
    for sweep in range(max_sweeps):
        bv_parts = []
        for axis in order:
            for comp in ps.components_of(axis):
                vals = boundary_values_arrays(comp, ps, use_newest=True)
                bv_parts.append(vals)
                if ps.dim == 2:
                    new = step2d(comp, vals, params, heights_n=comp.heights_prev)
                else:
                    guess = comp.heights if sweep > 0 else None
                    new = step3d(comp, vals, params,
                                 heights_n=comp.heights_prev, initial_guess=guess)
                comp.set_heights(new)
        sweeps_done = sweep + 1
        bv = np.concatenate(bv_parts) if bv_parts else np.empty(0)
        if prev_bv is not None and len(bv) == len(prev_bv):
            residual = float(np.abs(bv - prev_bv).max()) if len(bv) else 0.0
            history.append(residual)
            if residual < tol:
                break
        prev_bv = bv
    return ps, {"sweeps": sweeps_done, "residual": residual, "history": history}


def adi_step(patchset, params, plan=None):
    """One global time step with the alternating sweep, then reseeding."""
    if plan is None:
        plan = SweepPlan.for_dim(patchset.dim)
    plan.validate(patchset.dim)
    ps, _ = _sweep_until(patchset, params, plan.order, max_sweeps=1, tol=0.0)
    return reseed(ps)


def schwarz_step(patchset, params, plan=None, info_out=None):
    """One global time step with the coupled matching condition.

    Repeats alternating sweeps within the time level, re-deriving boundary
    values from the newest iterates, until their max-norm change drops below
    plan.schwarz_tol (or the sweep cap is reached, which raises the
    SchwarzStagnation warning and keeps the last iterate).  With
    schwarz_max_iters=1 this is exactly the ADI step.  info_out, if given,
    is filled with the sweep count and boundary-residual history.
    """
    if plan is None:
        plan = SweepPlan.for_dim(patchset.dim, mode="schwarz")
    plan.validate(patchset.dim)
    ps, info = _sweep_until(patchset, params, plan.order,
                            max_sweeps=plan.schwarz_max_iters,
                            tol=plan.schwarz_tol)
    if info_out is not None:
        info_out.update(info)
    if plan.schwarz_max_iters > 1 and info["residual"] >= plan.schwarz_tol:
        warnings.warn(
            f"Schwarz iteration stagnated: residual {info['residual']:.3e} "
            f"after {info['sweeps']} sweeps", SchwarzStagnation)
    return reseed(ps)

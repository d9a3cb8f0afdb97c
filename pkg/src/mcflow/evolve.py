"""Semi-implicit time stepping of one height-field component.

The stiff second-difference terms are implicit while the slope-dependent
coefficients are frozen at the previous time level, so each step is one
linear solve per component: a tridiagonal system in 2D (direct sweep) and a
nine-point system in 3D (SOR iteration).  Dirichlet values at the boundary
nodes come from the matching condition and enter the right-hand side.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .errors import IterationLimit, SingularSystem


@dataclass
class StepParams:
    """Time-step size and linear-solver settings.

    solver applies to the 3D nine-point system ("sor"); the 2D system is
    tridiagonal and always solved directly ("thomas").
    """

    dt: float
    solver: str = "sor"
    sor_omega: float = 1.5
    sor_tol: float = 1e-10
    sor_max_iters: int = 10_000

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.solver not in ("thomas", "sor"):
            raise ValueError("solver must be 'thomas' or 'sor'")
        if not (1.0 <= self.sor_omega < 2.0):
            raise ValueError("sor_omega must lie in [1, 2)")
        if self.sor_tol <= 0:
            raise ValueError("sor_tol must be positive")


@dataclass
class Coeffs3D:
    """Nine-point scheme coefficients: c1 * d2_vv + c2 * du dv + c3 * d2_uu.

    With slopes (wu, wv) from central differences and
    D = 2 (1 + wu^2 + wv^2):  c1 = (1 + wu^2)/D, c3 = (1 + wv^2)/D,
    c2 = -2 wu wv / D, so the discrete operator is consistent with the
    height-function evolution equation.  Ellipticity: c1 c3 > (c2/2)^2.
    """

    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray


def coeffs3d(heights, h):
    """Scheme coefficients from a height field (NaN where undefined)."""
    w = np.asarray(heights, dtype=float)
    wu = np.full_like(w, np.nan)
    wv = np.full_like(w, np.nan)
    wu[1:-1, :] = (w[2:, :] - w[:-2, :]) / (2.0 * h)
    wv[:, 1:-1] = (w[:, 2:] - w[:, :-2]) / (2.0 * h)
    d = 2.0 * (1.0 + wu * wu + wv * wv)
    return Coeffs3D(c1=(1.0 + wu * wu) / d, c2=-2.0 * wu * wv / d,
                    c3=(1.0 + wv * wv) / d)


def _boundary_array(component, boundary_values):
    """Heights with Dirichlet values written at the boundary nodes.

    boundary_values is either a mapping {global base index: value} covering
    every boundary node, or an ndarray aligned with
    component.boundary_locals() order.
    """
    out = component.heights.copy()
    blocs = component.boundary_locals()
    if isinstance(boundary_values, np.ndarray):
        vals = boundary_values
        if len(vals) != len(blocs):
            raise ValueError("boundary value array does not match boundary nodes")
    else:
        vals = np.empty(len(blocs))
        for k, loc in enumerate(blocs):
            gidx = tuple(int(v) for v in (loc + component.origin))
            key = gidx[0] if len(gidx) == 1 else gidx
            if key in boundary_values:
                vals[k] = boundary_values[key]
            elif gidx in boundary_values:
                vals[k] = boundary_values[gidx]
            else:
                raise ValueError(f"missing boundary value for node {gidx}")
    if component.dim == 2:
        out[blocs[:, 0]] = vals
    else:
        out[blocs[:, 0], blocs[:, 1]] = vals
    return out


def step2d(component, boundary_values, params, heights_n=None):
    """Advance a 2D component one step; returns the new height window.

    Solves (w - w_n)/dt = d2 w / ((d w_n)^2 + 1) with the second difference
    implicit, as a tridiagonal system over the interior nodes with Dirichlet
    ends.  heights_n optionally supplies the frozen previous-level heights
    (defaults to the component's current heights).
    """
    w0 = component.heights if heights_n is None else heights_n
    h = component.grid.h
    dt = params.dt
    mask = component.mask
    idx = np.nonzero(mask)[0]
    i0, i1 = int(idx[0]), int(idx[-1])

    new = np.full_like(w0, np.nan)
    bvals = _boundary_array(component, boundary_values)
    new[i0], new[i1] = bvals[i0], bvals[i1]
    m = i1 - i0 - 1  # interior unknowns
    if m <= 0:
        return new

    wi = w0[i0:i1 + 1]
    slope = (wi[2:] - wi[:-2]) / (2.0 * h)
    lam = dt / (h * h * (slope * slope + 1.0))

    rhs = wi[1:-1].copy()
    rhs[0] += lam[0] * new[i0]
    rhs[-1] += lam[-1] * new[i1]

    ab = np.zeros((3, m))
    ab[0, 1:] = -lam[:-1]      # upper diagonal
    ab[1, :] = 1.0 + 2.0 * lam
    ab[2, :-1] = -lam[1:]      # lower diagonal
    try:
        sol = solve_banded((1, 1), ab, rhs, check_finite=False)
    except np.linalg.LinAlgError as exc:  # pragma: no cover - dt>0 forbids this
        raise SingularSystem(str(exc)) from exc
    new[i0 + 1:i1] = sol
    return new


class _SorScaffold:
    """Precomputed flat-index layout for colored SOR sweeps on a window."""

    __slots__ = ("colors", "all_idx", "offs")

    def __init__(self, component):
        interior = component.interior
        su, sv = interior.shape
        iu, iv = np.nonzero(interior)
        flat = iu * sv + iv
        gu = iu + component.origin[0]
        gv = iv + component.origin[1]
        color = (gu & 1) * 2 + (gv & 1)
        self.colors = [flat[color == c] for c in range(4)]
        self.all_idx = flat
        # neighbor offsets in flat layout: E/W (u +- 1), N/S (v +- 1), diagonals
        self.offs = (sv, -sv, 1, -1, sv + 1, -sv - 1, sv - 1, -sv + 1)


def _sor_cache(component):
    cache = getattr(component, "_sor_scaffold", None)
    if cache is None:
        cache = _SorScaffold(component)
        component._sor_scaffold = cache
    return cache


def step3d(component, boundary_values, params, heights_n=None, initial_guess=None):
    """Advance a 3D component one step; returns the new height window.

    Solves the nine-point system (I - dt L) w = w_n with coefficients frozen
    at the previous level, by four-color SOR iterated until the residual
    max-norm drops below params.sor_tol.  Boundary nodes hold their Dirichlet
    values throughout.  Raises IterationLimit when the sweep cap is hit.
    """
    w0 = component.heights if heights_n is None else heights_n
    h = component.grid.h
    dt = params.dt
    hh = h * h

    bed = _boundary_array(component, boundary_values)
    if initial_guess is not None:
        work = initial_guess.copy()
        blocs = component.boundary_locals()
        work[blocs[:, 0], blocs[:, 1]] = bed[blocs[:, 0], blocs[:, 1]]
    else:
        work = bed.copy()
    scaffold = _sor_cache(component)
    if len(scaffold.all_idx) == 0:
        return work

    co = coeffs3d(w0, h)
    wf = work.ravel()
    w0f = w0.ravel()
    oE, oW, oN, oS, oNE, oSW, oNW, oSE = scaffold.offs

    def prep(idx):
        a1 = dt * co.c1.ravel()[idx] / hh
        a3 = dt * co.c3.ravel()[idx] / hh
        a2 = dt * co.c2.ravel()[idx] / (4.0 * hh)
        diag = 1.0 + 2.0 * (a1 + a3)
        return idx, a1, a2, a3, diag, w0f[idx]

    groups = [prep(idx) for idx in scaffold.colors if len(idx)]
    idx_all, a1_all, a2_all, a3_all, diag_all, rhs_all = prep(scaffold.all_idx)

    def local_op(idx, a1, a2, a3):
        axial = (a1 * (wf[idx + oN] + wf[idx + oS])
                 + a3 * (wf[idx + oE] + wf[idx + oW]))
        cross = a2 * (wf[idx + oNE] + wf[idx + oSW]
                      - wf[idx + oNW] - wf[idx + oSE])
        return axial + cross

    # predictor: one explicit application sharpens the initial guess
    if initial_guess is None:
        expl = rhs_all + local_op(idx_all, a1_all, a2_all, a3_all) \
            - (diag_all - 1.0) * wf[idx_all]
        wf[idx_all] = expl

    om = params.sor_omega
    for sweep in range(params.sor_max_iters):
        for idx, a1, a2, a3, diag, rhs in groups:
            val = (rhs + local_op(idx, a1, a2, a3)) / diag
            wf[idx] = (1.0 - om) * wf[idx] + om * val
        res = rhs_all + local_op(idx_all, a2=a2_all, a1=a1_all, a3=a3_all) \
            - diag_all * wf[idx_all]
        if np.abs(res).max() < params.sor_tol:
            return work
    raise IterationLimit(
        f"SOR did not reach tol={params.sor_tol} in {params.sor_max_iters} sweeps"
    )

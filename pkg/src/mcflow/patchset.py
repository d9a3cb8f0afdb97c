"""Overlapping height-field representation of the moving hypersurface.

The surface is covered by axis-aligned subsets: a control point on a grid
line aligned with axis r belongs to the axis-r subset when |n . e_r| exceeds
cos(alpha).  Each subset splits into isolated single-valued components, each
stored as a dense height window over its base-plane bounding box (one cell of
padding all around, NaN outside the component).  Local quadratic fits of the
height field supply interpolation, normals, and the crossing solves used for
boundary matching and reseeding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InsufficientStencil, SurfaceLost
from .geometry import Grid
from .points import ControlPoint, PointSet

_DEDUP_FRACTION = 0.5  # candidates closer than this (in units of h) merge


@dataclass(frozen=True)
class DecompositionParams:
    """Thresholds of the overlapping decomposition.

    alpha  : subset-membership half angle (radians); a point joins the
             axis-r subset when |n . e_r| > cos(alpha).
    d0     : maximum distance between points of one component.
    theta0 : maximum angle between normals of adjacent points of one
             component (radians).
    """

    alpha: float
    d0: float
    theta0: float

    @classmethod
    def for_grid(cls, grid, alpha_deg=60.0, d0_factor=5.0, theta0_deg=30.0):
        return cls(
            alpha=math.radians(alpha_deg),
            d0=d0_factor * grid.h,
            theta0=math.radians(theta0_deg),
        )

    @property
    def cos_alpha(self):
        return math.cos(self.alpha)

    @property
    def cos_theta0(self):
        return math.cos(self.theta0)

    def validate(self, dim):
        if not (self.cos_alpha < 1.0 / math.sqrt(dim)):
            raise ValueError(
                f"alpha={self.alpha} too small: need cos(alpha) < 1/sqrt({dim}) "
                "so every unit normal passes the decomposition rule for some axis"
            )
        if self.d0 <= 0:
            raise ValueError("d0 must be positive")
        if not (0 < self.theta0 < math.pi / 2):
            raise ValueError("theta0 must lie in (0, pi/2)")


def base_dims(axis, dim):
    """Base-plane dimensions (ascending) of an axis-r height field."""
    return tuple(k for k in range(dim) if k != axis)


def classify_axes(normal, params):
    """Axes r with |n . e_r| > cos(alpha); never empty for valid params."""
    n = np.asarray(normal, dtype=float)
    return {int(r) for r in np.nonzero(np.abs(n) > params.cos_alpha)[0]}


def pou_axis(normal):
    """Axis of the dominant normal component (ties break to the smallest)."""
    return int(np.argmax(np.abs(np.asarray(normal, dtype=float))))


# ---------------------------------------------------------------------------
# local quadratic fits
# ---------------------------------------------------------------------------
#
# 3D fits use the 3x3 base-plane window around a node and the scaled basis
# [1, U, V, U^2, V^2, UV] with offsets in units of h.  Degenerate window
# patterns (fewer than three offset levels in a direction) drop the
# unidentifiable basis columns; the affected coefficients stay zero.

_OFFSETS_3X3 = np.array([(du, dv) for du in (-1, 0, 1) for dv in (-1, 0, 1)])
_PATTERN_CACHE = {}


def _pattern_solver(pattern):
    """Least-squares solver for one 9-bit stencil occupancy pattern."""
    cached = _PATTERN_CACHE.get(pattern)
    if cached is not None:
        return cached
    present = np.array([(pattern >> k) & 1 for k in range(9)], dtype=bool)
    offs = _OFFSETS_3X3[present]
    u_levels = np.unique(offs[:, 0])
    v_levels = np.unique(offs[:, 1])
    cols = [0]
    if len(u_levels) >= 2:
        cols.append(1)
    if len(v_levels) >= 2:
        cols.append(2)
    if len(u_levels) >= 3:
        cols.append(3)
    if len(v_levels) >= 3:
        cols.append(4)
    if len(u_levels) >= 2 and len(v_levels) >= 2:
        cols.append(5)
    u, v = offs[:, 0].astype(float), offs[:, 1].astype(float)
    full = np.stack([np.ones_like(u), u, v, u * u, v * v, u * v], axis=1)
    design = full[:, cols]
    pinv = np.linalg.pinv(design)
    # a gradient is trusted only when quadratic in both directions: the
    # one-sided linear estimate is O(h) and too noisy for the membership
    # thresholds applied at patch fringes
    grad_ok = (3 in cols) and (4 in cols) and (5 in cols)
    value_ok = int(present.sum()) >= 6
    solver = (present, np.array(cols), pinv, grad_ok, value_ok)
    _PATTERN_CACHE[pattern] = solver
    return solver


class _Fits3D:
    """Per-node quadratic fit coefficients for a 3D component window."""

    __slots__ = ("coeffs", "grad_ok", "value_ok", "npts")

    def __init__(self, heights, mask):
        su, sv = heights.shape
        coeffs = np.zeros((su, sv, 6))
        grad_ok = np.zeros((su, sv), dtype=bool)
        value_ok = np.zeros((su, sv), dtype=bool)
        npts = np.zeros((su, sv), dtype=np.int64)

        iu, iv = np.nonzero(mask)
        if len(iu):
            win = np.empty((len(iu), 9))
            pres = np.empty((len(iu), 9), dtype=bool)
            for k, (du, dv) in enumerate(_OFFSETS_3X3):
                pres[:, k] = mask[iu + du, iv + dv]
                win[:, k] = np.where(pres[:, k], heights[iu + du, iv + dv], 0.0)
            pattern = (pres * (1 << np.arange(9))).sum(axis=1)
            for pat in np.unique(pattern):
                sel = pattern == pat
                present, cols, pinv, g_ok, v_ok = _pattern_solver(int(pat))
                c = win[sel][:, present] @ pinv.T
                full = np.zeros((len(c), 6))
                full[:, cols] = c
                coeffs[iu[sel], iv[sel]] = full
                grad_ok[iu[sel], iv[sel]] = g_ok
                value_ok[iu[sel], iv[sel]] = v_ok
                npts[iu[sel], iv[sel]] = int(present.sum())
        self.coeffs = coeffs
        self.grad_ok = grad_ok
        self.value_ok = value_ok
        self.npts = npts

    def value(self, iu, iv, su, sv):
        """Evaluate fits at nodes (iu, iv) with offsets (su, sv) in units of h."""
        c = self.coeffs[iu, iv]
        return (c[..., 0] + c[..., 1] * su + c[..., 2] * sv
                + c[..., 3] * su * su + c[..., 4] * sv * sv + c[..., 5] * su * sv)

    def gradient(self, iu, iv, su, sv, h):
        c = self.coeffs[iu, iv]
        gu = (c[..., 1] + 2.0 * c[..., 3] * su + c[..., 5] * sv) / h
        gv = (c[..., 2] + 2.0 * c[..., 4] * sv + c[..., 5] * su) / h
        return gu, gv


class _Fits1D:
    """Per-node parabola coefficients along a 2D component run."""

    __slots__ = ("coeffs", "grad_ok")

    def __init__(self, heights, mask):
        n = len(heights)
        coeffs = np.zeros((n, 3))
        grad_ok = np.zeros(n, dtype=bool)
        i = np.nonzero(mask)[0]
        if len(i):
            has_l = mask[i - 1]
            has_r = mask[i + 1]
            w0 = heights[i]
            wl = np.where(has_l, heights[i - 1], 0.0)
            wr = np.where(has_r, heights[i + 1], 0.0)
            centered = has_l & has_r
            coeffs[i, 0] = w0
            coeffs[i, 1] = np.where(centered, 0.5 * (wr - wl), 0.0)
            coeffs[i, 2] = np.where(centered, 0.5 * (wr - 2.0 * w0 + wl), 0.0)
            grad_ok[i] = centered
        self.coeffs = coeffs
        self.grad_ok = grad_ok

    def value(self, i, s):
        c = self.coeffs[i]
        return c[..., 0] + c[..., 1] * s + c[..., 2] * s * s

    def gradient(self, i, s, h):
        c = self.coeffs[i]
        return (c[..., 1] + 2.0 * c[..., 2] * s) / h


# ---------------------------------------------------------------------------
# component
# ---------------------------------------------------------------------------

class PatchComponent:
    """One isolated single-valued height field of an axis subset.

    Heights live on a dense window over the component's base-plane bounding
    box, padded by one cell on every side; NaN marks positions outside the
    component.  ``origin`` is the global base index of window position 0, so
    global = origin + local.
    """

    def __init__(self, axis, comp_id, grid, origin, heights, normals, mask):
        self.axis = int(axis)
        self.comp_id = int(comp_id)
        self.grid = grid
        self.dim = grid.dim
        self.base = base_dims(self.axis, self.dim)
        self.origin = np.asarray(origin, dtype=np.int64)
        self.heights = heights
        self.normals = normals
        self.mask = mask
        self.interior = self._classify_interior(mask)
        ncomp = normals[..., self.axis][mask]
        self.orient = 1.0 if np.nanmean(ncomp) >= 0 else -1.0
        self._fits = None
        self._locals = None

    def clone(self):
        """Copy for in-place stepping: heights private, structure shared.

        Masks, normals and derived index structures are never mutated in
        place (set_heights replaces the heights array), so they are shared.
        """
        new = object.__new__(PatchComponent)
        new.axis = self.axis
        new.comp_id = self.comp_id
        new.grid = self.grid
        new.dim = self.dim
        new.base = self.base
        new.origin = self.origin
        new.heights = self.heights.copy()
        new.normals = self.normals
        new.mask = self.mask
        new.interior = self.interior
        new.orient = self.orient
        new._fits = None
        new._locals = self._locals
        return new

    @staticmethod
    def _classify_interior(mask):
        if mask.ndim == 1:
            return mask & np.roll(mask, 1) & np.roll(mask, -1)
        out = mask.copy()
        for du in (-1, 0, 1):
            for dv in (-1, 0, 1):
                if du or dv:
                    out &= np.roll(np.roll(mask, du, axis=0), dv, axis=1)
        return out

    # -- bookkeeping ------------------------------------------------------

    @property
    def n_nodes(self):
        return int(self.mask.sum())

    def node_locals(self):
        """Local window indices of the component's nodes, row-major order."""
        if self._locals is None:
            if self.mask.ndim == 1:
                self._locals = np.nonzero(self.mask)[0][:, None]
            else:
                iu, iv = np.nonzero(self.mask)
                self._locals = np.stack([iu, iv], axis=1)
        return self._locals

    def node_indices(self):
        """Global base-plane indices of the nodes."""
        return self.node_locals() + self.origin

    def boundary_locals(self):
        bmask = self.mask & ~self.interior
        if bmask.ndim == 1:
            return np.nonzero(bmask)[0][:, None]
        iu, iv = np.nonzero(bmask)
        return np.stack([iu, iv], axis=1)

    def base_coords(self, locals_):
        """Physical base-plane coordinates of local window indices."""
        g = self.grid
        return g.lo[list(self.base)] + g.h * (locals_ + self.origin)

    def heights_at(self, locals_):
        if self.mask.ndim == 1:
            return self.heights[locals_[:, 0]]
        return self.heights[locals_[:, 0], locals_[:, 1]]

    def normals_at(self, locals_):
        if self.mask.ndim == 1:
            return self.normals[locals_[:, 0]]
        return self.normals[locals_[:, 0], locals_[:, 1]]

    def positions(self, locals_=None):
        """Control-point positions in R^d (canonical node order by default)."""
        if locals_ is None:
            locals_ = self.node_locals()
        pos = np.empty((len(locals_), self.dim))
        pos[:, list(self.base)] = self.base_coords(locals_)
        pos[:, self.axis] = self.heights_at(locals_)
        return pos

    def set_heights(self, new_heights):
        self.heights = new_heights
        self._fits = None
        self._hbounds = None

    def locals_from_global(self, global_idx):
        global_idx = np.asarray(global_idx, dtype=np.int64)
        if global_idx.ndim == 1:
            global_idx = global_idx[:, None]
        return global_idx - self.origin

    def contains_index(self, global_idx):
        loc = self.locals_from_global(global_idx)
        shape = np.array(self.mask.shape)
        ok = np.all((loc >= 0) & (loc < shape), axis=1)
        out = np.zeros(len(loc), dtype=bool)
        if self.mask.ndim == 1:
            out[ok] = self.mask[loc[ok, 0]]
        else:
            out[ok] = self.mask[loc[ok, 0], loc[ok, 1]]
        return out

    def point(self, index):
        """ControlPoint view of the node at a global base index."""
        idx = np.atleast_1d(np.asarray(index, dtype=np.int64))
        if not self.contains_index(idx[None, :] if idx.ndim == 1 else idx)[0]:
            raise KeyError(f"no control point at base index {index}")
        loc = (idx - self.origin)[None, :]
        pos = self.positions(loc)[0]
        nrm = self.normals_at(loc)[0]
        return ControlPoint(
            position=tuple(pos), normal=tuple(nrm), axis=self.axis,
            line_index=tuple(idx), height=float(pos[self.axis]),
            component=self.comp_id,
        )

    # -- local fits ---------------------------------------------------------

    def fits(self):
        if self._fits is None:
            if self.dim == 2:
                self._fits = _Fits1D(self.heights, self.mask)
            else:
                self._fits = _Fits3D(self.heights, self.mask)
        return self._fits

    def height_bounds(self):
        if getattr(self, "_hbounds", None) is None:
            self._hbounds = (float(np.nanmin(self.heights)),
                             float(np.nanmax(self.heights)))
        return self._hbounds

    def scan_range(self, target_axis):
        """Physical extent of the window along the scan direction."""
        pos = self.base.index(target_axis)
        scan_dim = self.base[pos]
        lo = self.grid.lo[scan_dim] + self.grid.h * self.origin[pos]
        return lo, lo + self.grid.h * (self.mask.shape[pos] - 1), pos

    def node_normals_from_fits(self):
        """Recompute outward unit normals at all nodes from the height fits.

        Returns (locals, normals, ok): nodes whose fit cannot deliver a
        gradient borrow the fit of an adjacent node, evaluated at their own
        offset; nodes with no usable neighbor fit are flagged not-ok.
        """
        locs = self.node_locals()
        fits = self.fits()
        n = len(locs)
        h = self.grid.h
        ok = np.zeros(n, dtype=bool)
        grads = np.zeros((n, self.dim - 1))

        if self.dim == 2:
            i = locs[:, 0]
            own = fits.grad_ok[i]
            grads[own, 0] = fits.gradient(i[own], 0.0, h)
            ok |= own
            for shift in (-1, 1):
                need = ~ok
                if not need.any():
                    break
                j = i[need] + shift
                good = fits.grad_ok[j]
                sel = np.nonzero(need)[0][good]
                grads[sel, 0] = fits.gradient(j[good], -float(shift), h)
                ok[sel] = True
        else:
            iu, iv = locs[:, 0], locs[:, 1]
            own = fits.grad_ok[iu, iv]
            gu, gv = fits.gradient(iu[own], iv[own], 0.0, 0.0, h)
            grads[own, 0], grads[own, 1] = gu, gv
            ok |= own
            for du, dv in ((-1, 0), (1, 0), (0, -1), (0, 1)):
                need = ~ok
                if not need.any():
                    break
                ju, jv = iu[need] + du, iv[need] + dv
                good = self.mask[ju, jv] & fits.grad_ok[ju, jv]
                sel = np.nonzero(need)[0][good]
                gu, gv = fits.gradient(ju[good], jv[good],
                                       -float(du), -float(dv), h)
                grads[sel, 0], grads[sel, 1] = gu, gv
                ok[sel] = True

        normals = self._normals_from_gradients(grads)
        return locs, normals, ok

    def _normals_from_gradients(self, grads):
        metric = np.sqrt(1.0 + (grads ** 2).sum(axis=1))
        normals = np.empty((len(grads), self.dim))
        normals[:, list(self.base)] = -grads
        normals[:, self.axis] = 1.0
        normals *= self.orient / metric[:, None]
        return normals

    # -- crossings of the height surface with grid lines -------------------

    def _scan_views(self, target_axis, heights=None, interior_only=False):
        """Window views with the scan direction (toward target_axis) last."""
        w = self.heights if heights is None else heights
        m = self.interior if interior_only else self.mask
        pos = self.base.index(target_axis)
        if self.dim == 2 or pos == 1:
            return w, m, pos
        return w.T, m.T, pos

    def _triple_coeffs(self, wv, mv, row, i):
        """Parabola through three row nodes covering the cell (i, i+1).

        Prefers the triple centered at i; falls back to the right-shifted
        triple, then to the linear secant.  Coefficients are in units of h
        with s measured from node i; valid for s in [0, 1].
        """
        if wv.ndim == 1:
            w_m1, w_0, w_1 = wv[i - 1], wv[i], wv[i + 1]
            w_2 = wv[np.minimum(i + 2, len(wv) - 1)]
            m_m1 = mv[i - 1]
            m_2 = mv[np.minimum(i + 2, len(mv) - 1)]
        else:
            w_m1, w_0, w_1 = wv[row, i - 1], wv[row, i], wv[row, i + 1]
            i2 = np.minimum(i + 2, wv.shape[1] - 1)
            w_2 = wv[row, i2]
            m_m1 = mv[row, i - 1]
            m_2 = mv[row, i2] & (i + 2 <= wv.shape[1] - 1)

        lin_c2 = w_1 - w_0
        cen_c2 = 0.5 * (w_1 - np.where(m_m1, w_m1, 0.0))
        cen_c3 = 0.5 * (w_1 - 2.0 * w_0 + np.where(m_m1, w_m1, 0.0))
        rgt_c2 = 0.5 * (-3.0 * w_0 + 4.0 * w_1 - np.where(m_2, w_2, 0.0))
        rgt_c3 = 0.5 * (w_0 - 2.0 * w_1 + np.where(m_2, w_2, 0.0))

        c2 = np.where(m_m1, cen_c2, np.where(m_2, rgt_c2, lin_c2))
        c3 = np.where(m_m1, cen_c3, np.where(m_2, rgt_c3, 0.0))
        return w_0, c2, c3

    def _fringe_triple(self, wv, mv, row, n, inward):
        """One-sided parabola anchored at a fringe node n (s measured from n).

        inward=+1 uses nodes (n, n+1, n+2) for extrapolation toward s < 0;
        inward=-1 uses (n, n-1, n-2) for extrapolation toward s > 0.
        Falls back to the one-sided secant when the third node is missing.
        """
        size = wv.shape[-1]
        n1 = np.clip(n + inward, 0, size - 1)
        n2 = np.clip(n + 2 * inward, 0, size - 1)
        if wv.ndim == 1:
            w0, w1, w2 = wv[n], wv[n1], wv[n2]
            m1, m2 = mv[n1], mv[n2]
        else:
            w0, w1, w2 = wv[row, n], wv[row, n1], wv[row, n2]
            m1, m2 = mv[row, n1], mv[row, n2]
        m2 = m2 & (np.abs(n2 - n) == 2)
        w1s = np.where(m1, w1, 0.0)
        w2s = np.where(m2, w2, 0.0)
        # quadratic through s = 0, inward, 2*inward (in units of h)
        quad_c2 = inward * 0.5 * (-3.0 * w0 + 4.0 * w1s - w2s)
        quad_c3 = 0.5 * (w0 - 2.0 * w1s + w2s)
        lin_c2 = inward * (w1s - w0)
        c2 = np.where(m2, quad_c2, lin_c2)
        c3 = np.where(m2, quad_c3, 0.0)
        return np.where(m1, w0, np.nan), c2, c3

    @staticmethod
    def _solve_quad(c1, c2, c3, level, s_lo, s_hi, guess):
        """Root of c1 + c2 s + c3 s^2 = level nearest guess in [s_lo, s_hi]."""
        a, b, c = c3, c2, c1 - level
        disc = np.maximum(b * b - 4.0 * a * c, 0.0)
        sgn = np.where(b >= 0, 1.0, -1.0)
        q = -0.5 * (b + sgn * np.sqrt(disc))
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = q / a
            r2 = c / q

        def score(r):
            bad = ~np.isfinite(r) | (r < s_lo - 1e-9) | (r > s_hi + 1e-9)
            return np.where(bad, np.inf, np.abs(r - guess))

        pick = np.where(score(r1) <= score(r2), r1, r2)
        pick = np.where(np.isfinite(score(pick)), pick, guess)
        return np.clip(pick, s_lo, s_hi)

    def _solve_cell_quadratic(self, c1, c2, c3, level):
        """Root inside the cell s in [0, 1].

        The parabola interpolates both cell endpoint heights, which bracket
        the level, so a real root exists up to roundoff.
        """
        with np.errstate(divide="ignore", invalid="ignore"):
            lin = (level - c1) / c2
        guess = np.clip(np.where(np.isfinite(lin), lin, 0.5), 0.0, 1.0)
        return self._solve_quad(c1, c2, c3, level, 0.0, 1.0, guess)

    def line_crossings(self, target_axis):
        """All crossings of the component surface with target-axis lines.

        Returns (points: PointSet, src_quality) where src_quality is
        |n . e_axis| of the crossing normal with respect to the component's
        own axis (used to rank duplicate candidates from different donors).
        Crossing positions are found from row-wise parabola solves; normals
        come from the nodal quadratic fits evaluated at the crossing.
        """
        g = self.grid
        h = g.h
        wv, mv, pos = self._scan_views(target_axis)
        lvl_lo = g.lo[self.axis]

        if self.dim == 2:
            valid = mv[:-1] & mv[1:]
            i_idx = np.nonzero(valid)[0]
            w0, w1 = wv[i_idx], wv[i_idx + 1]
            row_idx = np.zeros(len(i_idx), dtype=np.int64)
        else:
            valid = mv[:, :-1] & mv[:, 1:]
            row_idx, i_idx = np.nonzero(valid)
            w0, w1 = wv[row_idx, i_idx], wv[row_idx, i_idx + 1]

        if len(i_idx) == 0:
            return PointSet.empty(self.dim), np.empty(0)

        lo = np.minimum(w0, w1)
        hi = np.maximum(w0, w1)
        kmin = np.ceil((lo - lvl_lo) / h - 1e-12).astype(np.int64)
        kmax = np.floor((hi - lvl_lo) / h + 1e-12).astype(np.int64)
        kmin = np.clip(kmin, 0, g.n_cells)
        kmax = np.clip(kmax, 0, g.n_cells)
        counts = np.maximum(kmax - kmin + 1, 0)
        if counts.sum() == 0:
            return PointSet.empty(self.dim), np.empty(0)

        if counts.max() <= 1:
            pair = np.nonzero(counts == 1)[0]
            k = kmin[pair]
        else:
            pair = np.repeat(np.arange(len(i_idx)), counts)
            offs = np.arange(len(pair)) - np.repeat(
                np.concatenate(([0], np.cumsum(counts)[:-1])), counts)
            k = kmin[pair] + offs
        levels = lvl_lo + h * k
        crossed = (w0[pair] <= levels) != (w1[pair] <= levels)
        pair, k, levels = pair[crossed], k[crossed], levels[crossed]
        if len(pair) == 0:
            return PointSet.empty(self.dim), np.empty(0)

        rows = row_idx[pair]
        cells = i_idx[pair]
        c1, c2, c3 = self._triple_coeffs(wv, mv, rows, cells)
        s = self._solve_cell_quadratic(c1, c2, c3, levels)
        return self._crossing_points(target_axis, pos, rows, cells, s, k, levels)

    def _crossing_points(self, target_axis, pos, rows, cells, s, k, levels):
        """Assemble crossing PointSet from row/cell/offset data."""
        g = self.grid
        h = g.h
        fits = self.fits()

        # nearest node (along the scan) anchors the normal evaluation
        anchor = np.where(s <= 0.5, cells, cells + 1)
        s_off = s - (anchor - cells)
        if self.dim == 2:
            a = anchor
            ok = fits.grad_ok[a]
            alt = np.where(s <= 0.5, cells + 1, cells)
            a = np.where(ok, a, alt)
            s_off = s - (a - cells)
            ok = fits.grad_ok[a]
            grads = fits.gradient(a, s_off, h)[:, None]
        else:
            if pos == 1:
                au, av = rows, anchor
                alt_u, alt_v = rows, np.where(s <= 0.5, cells + 1, cells)
            else:
                au, av = anchor, rows
                alt_u, alt_v = np.where(s <= 0.5, cells + 1, cells), rows
            ok = fits.grad_ok[au, av]
            au = np.where(ok, au, alt_u)
            av = np.where(ok, av, alt_v)
            ok = fits.grad_ok[au, av]
            if pos == 1:
                su = np.zeros(len(s))
                sv = s - (av - cells)
            else:
                su = s - (au - cells)
                sv = np.zeros(len(s))
            gu, gv = fits.gradient(au, av, su, sv, h)
            grads = np.stack([gu, gv], axis=1)

        keepers = ok
        rows, cells, s, k, levels = (arr[keepers] for arr in (rows, cells, s, k, levels))
        grads = grads[keepers]
        if len(s) == 0:
            return PointSet.empty(self.dim), np.empty(0)

        normals = self._normals_from_gradients(grads)

        scan_dim_local = pos          # position of the scan dim in self.base
        other_dim_local = 1 - pos     # row dim (3D only)
        scan_dim = self.base[scan_dim_local]
        pts = np.empty((len(s), self.dim))
        pts[:, self.axis] = levels
        pts[:, scan_dim] = g.lo[scan_dim] + h * (self.origin[scan_dim_local] + cells + s)
        line_cols = {self.axis: k}
        if self.dim == 3:
            other_dim = self.base[other_dim_local]
            pts[:, other_dim] = g.lo[other_dim] + h * (self.origin[other_dim_local] + rows)
            line_cols[other_dim] = rows + self.origin[other_dim_local]

        tgt_base = base_dims(target_axis, self.dim)
        line_index = np.stack([line_cols[dmn] for dmn in tgt_base], axis=1)
        points = PointSet(
            pts, normals, np.full(len(s), target_axis, dtype=np.int64),
            line_index, pts[:, target_axis],
        )
        quality = np.abs(normals[:, self.axis])
        return points, quality

    def crossing_near(self, target_axis, row_locals, levels, approx,
                      window=3, heights=None, interior_only=False):
        """Crossing of specific target-axis lines nearest given positions.

        With interior_only=True the interpolation anchors exclusively on
        interior (scheme-solved) nodes; crossings up to two cells beyond the
        interior region are reached by the fringe parabola extrapolation.

        row_locals : local index along the non-scan base dim (ignored in 2D)
        levels     : physical height levels (grid coordinates along self.axis)
        approx     : expected physical scan coordinates
        heights    : optional height window to scan instead of the current one
        Returns (found, scan_coord, anchor_normal).
        """
        g = self.grid
        h = g.h
        wv, mv, pos = self._scan_views(target_axis, heights, interior_only)
        scan_dim = self.base[pos]
        origin_scan = self.origin[pos]
        m = len(levels)
        size = wv.shape[-1]

        i0 = np.floor((approx - g.lo[scan_dim]) / h).astype(np.int64) - origin_scan
        rows = np.zeros(m, dtype=np.int64) if self.dim == 2 else row_locals

        if self.dim == 3:
            row_ok = (rows >= 0) & (rows < wv.shape[0])
        else:
            row_ok = np.ones(m, dtype=bool)
        rows_c = np.clip(rows, 0, wv.shape[0] - 1) if self.dim == 3 else rows

        # one (m, 2*window) matrix pass over the candidate cells
        i_mat = i0[:, None] + np.arange(-window, window)[None, :]
        inb = row_ok[:, None] & (i_mat >= 0) & (i_mat + 1 < size)
        ic = np.clip(i_mat, 0, size - 2)
        if self.dim == 2:
            okm = mv[ic] & mv[ic + 1]
            w0, w1 = wv[ic], wv[ic + 1]
        else:
            rc = rows_c[:, None]
            okm = mv[rc, ic] & mv[rc, ic + 1]
            w0, w1 = wv[rc, ic], wv[rc, ic + 1]
        lv = levels[:, None]
        cand = inb & okm & ((w0 <= lv) != (w1 <= lv))
        with np.errstate(divide="ignore", invalid="ignore"):
            s_lin = (lv - w0) / (w1 - w0)
        s_lin = np.clip(np.where(np.isfinite(s_lin), s_lin, 0.5), 0.0, 1.0)
        coord = g.lo[scan_dim] + h * (origin_scan + i_mat + s_lin)
        dist = np.where(cand, np.abs(coord - approx[:, None]), np.inf)
        col = np.argmin(dist, axis=1)
        rws_all = np.arange(m)
        best_cell = np.where(np.isfinite(dist[rws_all, col]),
                             i_mat[rws_all, col], -1)

        found = best_cell >= 0
        scan_coord = np.full(m, np.nan)
        anchor_node = np.full(m, -1, dtype=np.int64)
        if found.any():
            f = np.nonzero(found)[0]
            cells = best_cell[f]
            rws = rows_c[f]
            c1, c2, c3 = self._triple_coeffs(wv, mv, rws, cells)
            s = self._solve_cell_quadratic(c1, c2, c3, levels[f])
            scan_coord[f] = g.lo[scan_dim] + h * (origin_scan + cells + s)
            anchor_node[f] = np.where(s <= 0.5, cells, cells + 1)

        # Fallback: the line may pierce the surface just beyond the last
        # in-component node (the discrete subset fringe lags the true one as
        # the surface moves).  Extrapolate the one-sided row parabola by at
        # most two cells and accept a genuine root there.
        miss = np.nonzero(row_ok & ~found)[0]
        if len(miss):
            n_mat = i0[miss, None] + np.arange(-window, window + 1)[None, :]
            inb = (n_mat >= 1) & (n_mat <= size - 2)
            nc = np.clip(n_mat, 1, size - 2)
            if self.dim == 2:
                m0, ml, mr = mv[nc], mv[nc - 1], mv[nc + 1]
            else:
                rc = rows_c[miss, None]
                m0, ml, mr = mv[rc, nc], mv[rc, nc - 1], mv[rc, nc + 1]
            lv = levels[miss, None]
            apx = approx[miss, None]
            best_d = np.full(len(miss), np.inf)
            for inward, fringe in ((1, ~ml), (-1, ~mr)):
                cand = inb & m0 & fringe
                if not cand.any():
                    continue
                rc2 = rows_c[miss, None] if self.dim == 3 else None
                c1f, c2f, c3f = self._fringe_triple(wv, mv, rc2, nc, inward)
                lo_b, hi_b = (-2.0, 0.0) if inward == 1 else (0.0, 2.0)
                with np.errstate(divide="ignore", invalid="ignore"):
                    guess = (lv - c1f) / c2f
                guess = np.clip(np.where(np.isfinite(guess), guess, 0.0),
                                lo_b, hi_b)
                s = self._solve_quad(c1f, c2f, c3f, lv, lo_b, hi_b, guess)
                resid = np.abs(c1f + c2f * s + c3f * s * s - lv)
                coord = g.lo[scan_dim] + h * (origin_scan + nc + s)
                dist = np.where(cand & (resid < 1e-9),
                                np.abs(coord - apx), np.inf)
                col = np.argmin(dist, axis=1)
                rws = np.arange(len(miss))
                better = dist[rws, col] < best_d
                best_d = np.where(better, dist[rws, col], best_d)
                scan_coord[miss] = np.where(better, coord[rws, col],
                                            scan_coord[miss])
                anchor_node[miss] = np.where(better, nc[rws, col],
                                             anchor_node[miss])
            found = found | np.isfinite(scan_coord)

        anchor_normals = np.full((m, self.dim), np.nan)
        f = np.nonzero(anchor_node >= 0)[0]
        if len(f):
            if self.dim == 2:
                anchor_normals[f] = self.normals[anchor_node[f]]
            elif pos == 1:
                anchor_normals[f] = self.normals[rows_c[f], anchor_node[f]]
            else:
                anchor_normals[f] = self.normals[anchor_node[f], rows_c[f]]
        return found, scan_coord, anchor_normals


# ---------------------------------------------------------------------------
# public per-point operations
# ---------------------------------------------------------------------------

def interpolate_height(component, base_point):
    """Least-squares quadratic interpolation of the height field.

    base_point is a physical (d-1)-vector in the component's base plane,
    within one cell of the node set.  Raises InsufficientStencil when the
    neighborhood of the nearest node cannot support the quadratic fit
    (fewer than 6 points in 3D, no parabola triple in 2D).
    """
    g = component.grid
    bp = np.atleast_1d(np.asarray(base_point, dtype=float))
    loc = np.round((bp - g.lo[list(component.base)]) / g.h).astype(np.int64)
    loc -= component.origin
    shape = np.array(component.mask.shape)
    if np.any(loc < 0) or np.any(loc >= shape):
        raise InsufficientStencil(f"base point {base_point} outside component window")
    offs = (bp - component.base_coords(loc[None, :])[0]) / g.h
    fits = component.fits()
    if component.dim == 2:
        i = int(loc[0])
        if not component.mask[i]:
            raise InsufficientStencil("nearest node is not in the component")
        if fits.grad_ok[i]:
            return float(fits.value(i, offs[0]))
        for shift in (-1, 1):
            if fits.grad_ok[i + shift]:
                return float(fits.value(i + shift, offs[0] - shift))
        raise InsufficientStencil("no parabola triple near the base point")
    iu, iv = int(loc[0]), int(loc[1])
    if not component.mask[iu, iv]:
        raise InsufficientStencil("nearest node is not in the component")
    if not fits.value_ok[iu, iv]:
        raise InsufficientStencil("fewer than 6 stencil nodes for quadratic fit")
    return float(fits.value(iu, iv, offs[0], offs[1]))


def evaluate_normal(component, index):
    """Outward unit normal at a node, from the local quadratic fit.

    index is the global base-plane index of the node.  Orientation matches
    the component's stored normals.
    """
    idx = np.atleast_1d(np.asarray(index, dtype=np.int64))
    loc = idx - component.origin
    shape = np.array(component.mask.shape)
    if np.any(loc < 0) or np.any(loc >= shape):
        raise InsufficientStencil(f"index {index} outside component window")
    fits = component.fits()
    h = component.grid.h
    if component.dim == 2:
        i = int(loc[0])
        if not component.mask[i]:
            raise InsufficientStencil("node is not in the component")
        if fits.grad_ok[i]:
            g = fits.gradient(i, 0.0, h)
        elif fits.grad_ok[i + 1]:
            g = fits.gradient(i + 1, -1.0, h)
        elif fits.grad_ok[i - 1]:
            g = fits.gradient(i - 1, 1.0, h)
        else:
            raise InsufficientStencil("no parabola triple at the node")
        return component._normals_from_gradients(np.array([[g]]))[0]
    iu, iv = int(loc[0]), int(loc[1])
    if not component.mask[iu, iv]:
        raise InsufficientStencil("node is not in the component")
    if not fits.grad_ok[iu, iv]:
        raise InsufficientStencil("stencil cannot deliver a gradient")
    gu, gv = fits.gradient(iu, iv, 0.0, 0.0, h)
    return component._normals_from_gradients(np.array([[gu, gv]]))[0]


# ---------------------------------------------------------------------------
# patch set
# ---------------------------------------------------------------------------

class PatchSet:
    """All components of the overlapping decomposition at one time level."""

    def __init__(self, grid, params, components):
        self.grid = grid
        self.params = params
        self.components = list(components)

    @property
    def dim(self):
        return self.grid.dim

    @property
    def n_points(self):
        return sum(c.n_nodes for c in self.components)

    def components_of(self, axis):
        return [c for c in self.components if c.axis == axis]

    def all_points(self):
        """Positions and normals of every control point, canonical order."""
        pos = [c.positions() for c in self.components]
        nrm = [c.normals_at(c.node_locals()) for c in self.components]
        if not pos:
            d = self.dim
            return np.empty((0, d)), np.empty((0, d))
        return np.concatenate(pos), np.concatenate(nrm)

    def copy(self):
        return PatchSet(self.grid, self.params,
                        [c.clone() for c in self.components])

    def to_csv(self, path):
        """Snapshot export: x,y[,z],axis,component,nx,ny[,nz] per point."""
        d = self.dim
        cols = "xyz"[:d]
        header = ",".join(cols) + ",axis,component," + ",".join("n" + c for c in cols)
        rows = [header]
        order = sorted(self.components, key=lambda c: (c.axis, c.comp_id))
        for c in order:
            locs = c.node_locals()
            pos = c.positions(locs)
            nrm = c.normals_at(locs)
            for p, n in zip(pos, nrm):
                rows.append(
                    ",".join(f"{v:.17g}" for v in p)
                    + f",{c.axis},{c.comp_id},"
                    + ",".join(f"{v:.17g}" for v in n)
                )
        with open(path, "w") as fh:
            fh.write("\n".join(rows) + "\n")


# ---------------------------------------------------------------------------
# component construction
# ---------------------------------------------------------------------------

def _encode(line_index, stride):
    if line_index.shape[1] == 1:
        return line_index[:, 0].copy()
    return line_index[:, 0] * stride + line_index[:, 1]

def _axis_pairs(keys_sorted, pos_sorted, nrm_sorted, strides, params):
    """Candidate neighbor pairs (sorted-domain indices) passing the criteria."""
    m = len(keys_sorted)
    out_a, out_b = [], []
    for s in strides:
        target = keys_sorted + s
        left = np.searchsorted(keys_sorted, target, side="left")
        right = np.searchsorted(keys_sorted, target, side="right")
        counts = right - left
        if counts.max(initial=0) <= 1:
            # common case: at most one point per neighboring line
            src = np.nonzero(counts == 1)[0]
            dst = left[src]
        else:
            src = np.repeat(np.arange(m), counts)
            offs = np.arange(len(src)) - np.repeat(
                np.concatenate(([0], np.cumsum(counts)[:-1])), counts)
            dst = left[src] + offs
        if len(src) == 0:
            continue
        dist2 = ((pos_sorted[src] - pos_sorted[dst]) ** 2).sum(axis=1)
        ndot = (nrm_sorted[src] * nrm_sorted[dst]).sum(axis=1)
        good = (dist2 < params.d0 ** 2) & (ndot > params.cos_theta0)
        out_a.append(src[good])
        out_b.append(dst[good])
    if not out_a:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(out_a), np.concatenate(out_b)


def build_components(points, grid, params):
    """Partition control points into single-valued components.

    Applies the decomposition rule |n . e_axis| > cos(alpha) to each point,
    then joins adjacent points (base index differing by one) that are closer
    than d0 with normals within theta0, and labels connected groups.  Interior
    nodes are those whose full scheme stencil lies inside their component.
    The input point order does not affect the result.
    """
    params.validate(grid.dim)
    d = grid.dim
    stride = grid.n_cells + 3

    n_axis = points.normal[np.arange(len(points)), points.axis]
    pts = points.select(np.abs(n_axis) > params.cos_alpha)

    comps = []
    for r in range(d):
        sub = pts.select(pts.axis == r)
        if len(sub) == 0:
            continue
        keys = _encode(sub.line_index, stride)
        order = np.lexsort((sub.height, keys))
        keys_s = keys[order]
        sub_s = sub.select(order)
        strides = [1] if d == 2 else [stride, 1]
        a, b = _axis_pairs(keys_s, sub_s.position, sub_s.normal, strides, params)
        m = len(keys_s)
        graph = csr_matrix(
            (np.ones(len(a), dtype=np.int8), (a, b)), shape=(m, m))
        n_lab, labels = connected_components(graph, directed=False)

        # canonical component order: first occurrence in (key, height) order
        first = np.full(n_lab, m, dtype=np.int64)
        np.minimum.at(first, labels, np.arange(m))
        comp_rank = np.argsort(np.argsort(first))
        labels = comp_rank[labels]

        order2 = np.argsort(labels, kind="stable")
        sub_o = sub_s.select(order2)
        bounds = np.searchsorted(labels[order2], np.arange(n_lab + 1))
        for lab in range(n_lab):
            part = sub_o.select(slice(int(bounds[lab]), int(bounds[lab + 1])))
            comps.append(_make_component(r, grid, part, stride))

    for cid, c in enumerate(comps):
        c.comp_id = cid
    return PatchSet(grid, params, comps)


def _make_component(axis, grid, sub, stride):
    # Near a fold (lobe tip) two sheets merge smoothly, so the distance and
    # normal criteria cannot always separate a marginal fringe point from
    # the main branch; single-valuedness is enforced by keeping the point
    # whose normal aligns best with the component axis on each line.
    keys = _encode(sub.line_index, stride)
    if len(np.unique(keys)) != len(keys):
        align = np.abs(sub.normal[:, axis])
        order = np.lexsort((sub.height, -align, keys))
        ks = keys[order]
        first = np.ones(len(ks), dtype=bool)
        first[1:] = ks[1:] != ks[:-1]
        sel = np.zeros(len(ks), dtype=bool)
        sel[order] = first
        sub = sub.select(sel)

    li = sub.line_index
    lo = li.min(axis=0) - 1
    hi = li.max(axis=0) + 1
    shape = tuple(hi - lo + 1)
    local = li - lo
    d = grid.dim

    if d == 2:
        mask = np.zeros(shape[0], dtype=bool)
        heights = np.full(shape[0], np.nan)
        normals = np.full((shape[0], d), np.nan)
        idx = (local[:, 0],)
    else:
        mask = np.zeros(shape, dtype=bool)
        heights = np.full(shape, np.nan)
        normals = np.full(shape + (d,), np.nan)
        idx = (local[:, 0], local[:, 1])

    mask[idx] = True
    heights[idx] = sub.height
    normals[idx] = sub.normal
    return PatchComponent(axis, -1, grid, lo, heights, normals, mask)


# ---------------------------------------------------------------------------
# reseeding
# ---------------------------------------------------------------------------

def reseed(patchset):
    """Recompute control points of the evolved surface and rebuild components.

    Own-axis points are the stepped nodes themselves (kept when they still
    satisfy the decomposition rule with their refreshed normals); crossings
    with every other axis's lines are found by row-wise parabola solves.
    A stepped node that still passes the rule is kept as-is; interpolated
    crossings only fill in where no direct node exists (duplicates resolved
    in favor of the direct node, then the donor with the largest
    |n . e_donor|).
    Components too small to interpolate on (fewer than 3 nodes in 2D,
    6 in 3D) are deleted.  Raises SurfaceLost when nothing remains.
    """
    grid = patchset.grid
    d = grid.dim
    parts, quality, own_flag = [], [], []

    for comp in patchset.components:
        locs, normals, ok = comp.node_normals_from_fits()
        if ok.any():
            locs_ok = locs[ok]
            pos = np.empty((int(ok.sum()), d))
            pos[:, list(comp.base)] = comp.base_coords(locs_ok)
            pos[:, comp.axis] = comp.heights_at(locs_ok)
            nrm = normals[ok]
            parts.append(PointSet(
                pos, nrm, np.full(len(pos), comp.axis, dtype=np.int64),
                locs_ok + comp.origin, pos[:, comp.axis],
            ))
            quality.append(np.abs(nrm[:, comp.axis]))
            own_flag.append(np.ones(len(pos), dtype=bool))
        for target_axis in comp.base:
            cand, q = comp.line_crossings(target_axis)
            if len(cand):
                parts.append(cand)
                quality.append(q)
                own_flag.append(np.zeros(len(cand), dtype=bool))

    if not parts:
        raise SurfaceLost("no control points produced by reseeding")

    allpts = PointSet.concatenate(parts)
    quality = np.concatenate(quality)
    own_flag = np.concatenate(own_flag)
    keep = _dedup_candidates(allpts, quality, own_flag, grid)
    ps = build_components(allpts.select(keep), grid, patchset.params)
    return prune_small_components(ps)


def prune_small_components(patchset):
    """Delete components too small for the interpolation stencil.

    Raises SurfaceLost when nothing remains.
    """
    min_nodes = 3 if patchset.dim == 2 else 6
    comps = [c for c in patchset.components if c.n_nodes >= min_nodes]
    if not comps:
        raise SurfaceLost("all components below the interpolation stencil size")
    for cid, c in enumerate(comps):
        c.comp_id = cid
    return PatchSet(patchset.grid, patchset.params, comps)


def _dedup_candidates(points, quality, own_flag, grid):
    """Keep one candidate per (axis, line, crossing-cluster)."""
    stride = grid.n_cells + 3
    key = points.axis * stride ** (grid.dim - 1) + _encode(points.line_index, stride)
    order = np.lexsort((points.height, key))
    ks, hs = key[order], points.height[order]
    new_cluster = np.ones(len(order), dtype=bool)
    same_line = ks[1:] == ks[:-1]
    close = np.abs(hs[1:] - hs[:-1]) < _DEDUP_FRACTION * grid.h
    new_cluster[1:] = ~(same_line & close)
    cluster = np.cumsum(new_cluster) - 1

    prio = 2.0 * own_flag[order] + quality[order]
    best = np.full(cluster[-1] + 1, -1.0)
    np.maximum.at(best, cluster, prio)
    is_best = prio >= best[cluster]
    # exactly one winner per cluster: first of the best-priority entries
    winner_pos = np.full(cluster[-1] + 1, len(order), dtype=np.int64)
    np.minimum.at(winner_pos, cluster[is_best], np.nonzero(is_best)[0])
    keep_sorted = np.zeros(len(order), dtype=bool)
    keep_sorted[winner_pos[winner_pos < len(order)]] = True

    keep = np.zeros(len(order), dtype=bool)
    keep[order] = keep_sorted
    return keep

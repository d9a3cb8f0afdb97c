"""Cartesian grid, initial-shape catalog, and grid-line intersection seeding.

Shapes are given either implicitly (phi < 0 inside, phi > 0 outside, so that
grad(phi) points outward on the zero set) or parametrically (closed curves in
2D).  Seeding locates every crossing of the zero set with a grid line by
sign-change bracketing followed by bisection and a Newton polish.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConvergenceFailure, UnresolvedShape
from .points import PointSet

_BISECT_WIDTH_FACTOR = 1e-3  # bisect bracket down to this fraction of h
_REFINE_CAP = 50


class Grid:
    """Uniform Cartesian partition of a cubic bounding box.

    Every axis carries the same extent and the same number of cells, so a
    single spacing ``h`` applies everywhere and node coordinates reproduce
    exactly as ``lo + i * h``.
    """

    def __init__(self, lo, hi, n_cells):
        lo = np.atleast_1d(np.asarray(lo, dtype=float))
        hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError("lo and hi must have the same length")
        extents = hi - lo
        if not np.all(extents > 0):
            raise ValueError("box must have positive extent")
        if not np.allclose(extents, extents[0], rtol=0, atol=1e-12):
            raise ValueError("box must have equal extent on every axis")
        self.lo = lo
        self.hi = hi
        self.n_cells = int(n_cells)
        if self.n_cells < 1:
            raise ValueError("n_cells must be positive")
        self.h = float(extents[0]) / self.n_cells

    @classmethod
    def cube(cls, lo, hi, n_cells, dim):
        return cls(np.full(dim, float(lo)), np.full(dim, float(hi)), n_cells)

    @property
    def dim(self):
        return len(self.lo)

    def coords(self, axis):
        """Node coordinates along one axis, computed as lo + i*h."""
        return self.lo[axis] + self.h * np.arange(self.n_cells + 1)

    def node(self, axis, i):
        return self.lo[axis] + self.h * np.asarray(i)

    def __repr__(self):
        return f"Grid(lo={self.lo.tolist()}, hi={self.hi.tolist()}, n_cells={self.n_cells})"


# ---------------------------------------------------------------------------
# shape catalog
# ---------------------------------------------------------------------------

_MOLECULAR_CENTERS = np.array([
    (math.sqrt(3.0) / 3.0, 0.0, -math.sqrt(6.0) / 12.0),
    (-math.sqrt(3.0) / 6.0, 0.5, -math.sqrt(6.0) / 12.0),
    (-math.sqrt(3.0) / 6.0, -0.5, -math.sqrt(6.0) / 12.0),
    (0.0, 0.0, math.sqrt(6.0) / 4.0),
])


class Shape:
    """An initial hypersurface from the catalog.

    Provides the implicit function ``phi`` (and its gradient) when one
    exists, and the parametric map for 2D curves.  The general star with
    a != b is parametric-only; every other catalog shape is implicit.
    """

    def __init__(self, kind, dim, params, phi=None, grad=None,
                 parametric=None, parametric_derivs=None):
        self.kind = kind
        self.dim = dim
        self.params = dict(params)
        self._phi = phi
        self._grad = grad
        self._parametric = parametric
        self._parametric_derivs = parametric_derivs

    @property
    def has_implicit(self):
        return self._phi is not None

    @property
    def has_parametric(self):
        return self._parametric is not None

    def phi(self, x):
        """Implicit function at points x with shape (..., d)."""
        if self._phi is None:
            raise ValueError(f"shape {self.kind!r} has no implicit form")
        return self._phi(np.asarray(x, dtype=float))

    def grad_phi(self, x):
        x = np.asarray(x, dtype=float)
        if self._grad is not None:
            return self._grad(x)
        return _fd_gradient(self._phi, x)

    def parametric(self, theta):
        """Curve points (..., 2) for parameter values theta (2D shapes)."""
        if self._parametric is None:
            raise ValueError(f"shape {self.kind!r} has no parametric form")
        return self._parametric(np.asarray(theta, dtype=float))

    def parametric_derivs(self, theta):
        """First derivatives (x', y') of the parametric map."""
        if self._parametric_derivs is None:
            raise ValueError(f"shape {self.kind!r} has no parametric derivatives")
        return self._parametric_derivs(np.asarray(theta, dtype=float))

    def outward_normal_parametric(self, theta):
        """Outward unit normal of a counterclockwise parametric curve."""
        xd, yd = self.parametric_derivs(theta)
        speed = np.hypot(xd, yd)
        return np.stack([yd / speed, -xd / speed], axis=-1)

    def __repr__(self):
        return f"Shape({self.kind!r}, dim={self.dim}, params={self.params})"


def _fd_gradient(phi, x, eps=1e-7):
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for k in range(x.shape[-1]):
        xp = x.copy()
        xm = x.copy()
        xp[..., k] += eps
        xm[..., k] -= eps
        g[..., k] = (phi(xp) - phi(xm)) / (2 * eps)
    return g


def _circle(params):
    r = params["r"]

    def phi(x):
        return x[..., 0] ** 2 + x[..., 1] ** 2 - r * r

    def grad(x):
        return 2.0 * x

    def param(theta):
        return np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)

    def derivs(theta):
        return -r * np.sin(theta), r * np.cos(theta)

    return phi, grad, param, derivs


def _ellipse(params):
    a, b = params["a"], params["b"]

    def phi(x):
        return (x[..., 0] / a) ** 2 + (x[..., 1] / b) ** 2 - 1.0

    def grad(x):
        g = np.empty_like(x)
        g[..., 0] = 2.0 * x[..., 0] / a ** 2
        g[..., 1] = 2.0 * x[..., 1] / b ** 2
        return g

    def param(theta):
        return np.stack([a * np.cos(theta), b * np.sin(theta)], axis=-1)

    def derivs(theta):
        return -a * np.sin(theta), b * np.cos(theta)

    return phi, grad, param, derivs


def _star(params):
    a, b = params["a"], params["b"]
    kappa, eta, m = params["kappa"], params["eta"], params["m"]

    def rho(theta):
        return kappa + eta * np.sin(m * theta)

    def param(theta):
        r = rho(theta)
        return np.stack([a * r * np.cos(theta), b * r * np.sin(theta)], axis=-1)

    def derivs(theta):
        r = rho(theta)
        rd = eta * m * np.cos(m * theta)
        xd = a * (rd * np.cos(theta) - r * np.sin(theta))
        yd = b * (rd * np.sin(theta) + r * np.cos(theta))
        return xd, yd

    if a == b:
        # polar implicit form: |x|/a - rho(atan2(y, x))
        def phi(x):
            px, py = x[..., 0], x[..., 1]
            rr = np.hypot(px, py)
            theta = np.arctan2(py, px)
            return rr / a - rho(theta)

        def grad(x):
            px, py = x[..., 0], x[..., 1]
            rr = np.maximum(np.hypot(px, py), 1e-300)
            theta = np.arctan2(py, px)
            rd = eta * m * np.cos(m * theta)
            g = np.empty_like(x)
            # d theta / dx = -y/r^2, d theta / dy = x/r^2
            g[..., 0] = px / (a * rr) + rd * py / (rr * rr)
            g[..., 1] = py / (a * rr) - rd * px / (rr * rr)
            return g

        return phi, grad, param, derivs
    return None, None, param, derivs


def _sphere(params):
    r = params["r"]

    def phi(x):
        return (x ** 2).sum(axis=-1) - r * r

    def grad(x):
        return 2.0 * x

    return phi, grad


def _ellipsoid(params):
    a, b, c = params["a"], params["b"], params["c"]
    inv2 = np.array([1.0 / a ** 2, 1.0 / b ** 2, 1.0 / c ** 2])

    def phi(x):
        return (x ** 2 * inv2).sum(axis=-1) - 1.0

    def grad(x):
        return 2.0 * x * inv2

    return phi, grad


def _torus(params):
    a, c = params["a"], params["c"]

    def phi(x):
        rho = np.hypot(x[..., 0], x[..., 1])
        return (c - rho) ** 2 + x[..., 2] ** 2 - a * a

    def grad(x):
        rho = np.maximum(np.hypot(x[..., 0], x[..., 1]), 1e-300)
        f = 2.0 * (rho - c) / rho
        g = np.empty_like(x)
        g[..., 0] = f * x[..., 0]
        g[..., 1] = f * x[..., 1]
        g[..., 2] = 2.0 * x[..., 2]
        return g

    return phi, grad


def _molecular(params):
    c, r = params["c"], params["r"]
    centers = _MOLECULAR_CENTERS

    def terms(x):
        diff = x[..., None, :] - centers  # (..., 4, 3)
        return np.exp(-(diff ** 2).sum(axis=-1) / r ** 2), diff

    def phi(x):
        e, _ = terms(x)
        return c - e.sum(axis=-1)

    def grad(x):
        e, diff = terms(x)
        return (2.0 / r ** 2) * (e[..., None] * diff).sum(axis=-2)

    return phi, grad


_CATALOG_DEFAULTS = {
    "circle": (2, {"r": 1.0}),
    "ellipse": (2, {"a": 1.0, "b": 0.5}),
    "star": (2, {"a": 1.0, "b": 1.0, "kappa": 0.8, "eta": 0.2, "m": 5}),
    "sphere": (3, {"r": 1.0}),
    "ellipsoid": (3, {"a": 1.0, "b": 0.7, "c": 0.5}),
    "torus": (3, {"a": 0.34, "c": 0.8}),
    "molecular": (3, {"c": 0.5, "r": 0.5}),
}

_KIND_ALIASES = {"five-fold-star": "star"}


def shape_kinds():
    """Names of the built-in shapes."""
    return sorted(_CATALOG_DEFAULTS)


def make_shape(kind, **params):
    """Build a catalog shape, overriding default parameters by name."""
    kind = _KIND_ALIASES.get(kind, kind)
    if kind not in _CATALOG_DEFAULTS:
        raise ValueError(f"unknown shape kind {kind!r}; choose from {shape_kinds()}")
    dim, defaults = _CATALOG_DEFAULTS[kind]
    p = dict(defaults)
    unknown = set(params) - set(defaults)
    if unknown:
        raise ValueError(f"unknown parameters for {kind!r}: {sorted(unknown)}")
    p.update(params)

    if kind == "circle":
        phi, grad, param, derivs = _circle(p)
    elif kind == "ellipse":
        phi, grad, param, derivs = _ellipse(p)
    elif kind == "star":
        phi, grad, param, derivs = _star(p)
    else:
        param = derivs = None
        if kind == "sphere":
            phi, grad = _sphere(p)
        elif kind == "ellipsoid":
            phi, grad = _ellipsoid(p)
        elif kind == "torus":
            phi, grad = _torus(p)
        else:
            phi, grad = _molecular(p)
    return Shape(kind, dim, p, phi=phi, grad=grad,
                 parametric=param, parametric_derivs=derivs)


def level_set_shape(phi, dim, grad=None, name="user-level-set"):
    """Wrap a user-supplied level-set callable (phi < 0 inside)."""
    return Shape(name, dim, {}, phi=phi, grad=grad)


def eval_implicit(shape, x):
    """Evaluate the implicit function of a shape at point(s) x.

    Negative inside the enclosed region, positive outside.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return float(shape.phi(x[None, :])[0])
    return shape.phi(x)


# ---------------------------------------------------------------------------
# seeding: zero-set / grid-line intersections
# ---------------------------------------------------------------------------

def seed_intersections(shape, grid, tol=1e-10):
    """Find all intersection points of the shape with grid lines.

    Returns a PointSet where each entry lies on one grid line (axis = line
    direction), carries the outward unit normal, and satisfies
    |phi(p)| <= tol for implicit shapes (parametric curves are refined to
    the same tolerance in the line coordinate).

    Raises UnresolvedShape when a single cell edge hides more than one
    crossing (grid too coarse) and ConvergenceFailure when root refinement
    cannot reach the tolerance.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if shape.dim != grid.dim:
        raise ValueError("shape and grid dimensions differ")
    if shape.has_implicit:
        return _seed_implicit(shape, grid, tol)
    if shape.has_parametric and grid.dim == 2:
        return _seed_parametric(shape, grid, tol)
    raise ValueError(f"shape {shape.kind!r} has no usable representation")


def _line_batches(grid, r, max_lines=4096):
    """Yield (base_indices, base_coords) for the grid lines along axis r."""
    d = grid.dim
    base_dims = [k for k in range(d) if k != r]
    axes = [np.arange(grid.n_cells + 1, dtype=np.int64) for _ in base_dims]
    if base_dims:
        mesh = np.meshgrid(*axes, indexing="ij")
        idx = np.stack([m.ravel() for m in mesh], axis=1)
    else:
        idx = np.zeros((1, 0), dtype=np.int64)
    for start in range(0, len(idx), max_lines):
        chunk = idx[start:start + max_lines]
        coords = grid.lo[base_dims] + grid.h * chunk
        yield chunk, coords


def _seed_implicit(shape, grid, tol):
    d = grid.dim
    h = grid.h
    n_nodes = grid.n_cells + 1
    parts = []

    for r in range(d):
        base_dims = [k for k in range(d) if k != r]
        line_coord = grid.lo[r] + grid.h * np.arange(n_nodes)
        for base_idx, base_coords in _line_batches(grid, r):
            nl = len(base_idx)
            pts = np.empty((nl, n_nodes, d))
            pts[:, :, base_dims] = base_coords[:, None, :]
            pts[:, :, r] = line_coord[None, :]
            f = shape.phi(pts.reshape(-1, d)).reshape(nl, n_nodes)

            mids = 0.5 * (pts[:, :-1, :] + pts[:, 1:, :])
            fm = shape.phi(mids.reshape(-1, d)).reshape(nl, n_nodes - 1)

            fa, fb = f[:, :-1], f[:, 1:]
            hidden = (fa * fb > 0) & (fm * fa <= 0)
            if np.any(hidden):
                li, ci = np.argwhere(hidden)[0]
                raise UnresolvedShape(
                    f"multiple crossings inside one cell on an axis-{r} line "
                    f"(base index {tuple(base_idx[li])}, cell {ci}); refine the grid"
                )

            # cells where the midpoint already splits the bracket: use the half
            cross = fa * fb < 0
            li, ci = np.nonzero(cross)
            if len(li):
                lo = line_coord[ci].copy()
                hi = line_coord[ci + 1].copy()
                f_lo = fa[li, ci].copy()
                mid = 0.5 * (lo + hi)
                f_mid = fm[li, ci]
                left = f_lo * f_mid < 0
                hi = np.where(left, mid, hi)
                lo = np.where(left, lo, mid)
                f_lo = np.where(left, f_lo, f_mid)

                base = np.empty((len(li), d))
                base[:, base_dims] = base_coords[li]
                roots = _refine_implicit(shape, base, r, lo, hi, f_lo, tol, h)
                pos = base
                pos[:, r] = roots
                nrm = _unit_normals(shape, pos)
                parts.append(PointSet(
                    pos, nrm, np.full(len(li), r, dtype=np.int64),
                    base_idx[li], roots,
                ))

            # exact node hits become intersection points on this axis's lines
            zi, zj = np.nonzero(f == 0.0)
            if len(zi):
                pos = np.empty((len(zi), d))
                pos[:, base_dims] = base_coords[zi]
                pos[:, r] = line_coord[zj]
                nrm = _unit_normals(shape, pos)
                parts.append(PointSet(
                    pos, nrm, np.full(len(zi), r, dtype=np.int64),
                    base_idx[zi], pos[:, r],
                ))
    if not parts:
        return PointSet.empty(d)
    return PointSet.concatenate(parts)


def _unit_normals(shape, pos):
    g = shape.grad_phi(pos)
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    if np.any(norms <= 0):
        raise ConvergenceFailure("vanishing gradient on the zero set")
    return g / norms


def _refine_implicit(shape, base, r, lo, hi, f_lo, tol, h):
    """Refine bracketed roots along axis r: bisection then Newton polish."""
    m = len(lo)
    target_width = _BISECT_WIDTH_FACTOR * h
    x = 0.5 * (lo + hi)
    done = np.zeros(m, dtype=bool)
    pts = base.copy()
    iters = 0

    def f_at(xv, sel):
        pts[sel, r] = xv[sel]
        return shape.phi(pts[sel])

    # plain bisection down to the target width
    while iters < _REFINE_CAP and (hi - lo).max() > target_width:
        x = 0.5 * (lo + hi)
        fx = f_at(x, slice(None))
        done |= np.abs(fx) <= tol
        same = fx * f_lo > 0
        lo = np.where(same & ~done, x, lo)
        f_lo = np.where(same & ~done, fx, f_lo)
        hi = np.where(~same & ~done, x, hi)
        iters += 1
    x = np.where(done, x, 0.5 * (lo + hi))

    # Newton polish with bracket safeguarding
    while iters < _REFINE_CAP and not done.all():
        sel = ~done
        fx = f_at(x, sel)
        full_f = np.zeros(m)
        full_f[sel] = fx
        newly = np.abs(full_f) <= tol
        done |= sel & newly
        sel = ~done
        if not sel.any():
            break
        # update bracket from the latest evaluation
        same = full_f * f_lo > 0
        lo = np.where(sel & same, x, lo)
        f_lo = np.where(sel & same, full_f, f_lo)
        hi = np.where(sel & ~same & (full_f != 0), x, hi)

        g = shape.grad_phi(pts[sel])[:, r]
        step = np.zeros(m)
        with np.errstate(divide="ignore", invalid="ignore"):
            step[sel] = -full_f[sel] / g
        x_new = x + step
        bad = ~np.isfinite(x_new) | (x_new <= lo) | (x_new >= hi)
        x = np.where(sel & ~bad, x_new, np.where(sel, 0.5 * (lo + hi), x))
        iters += 1

    if not done.all():
        fx = f_at(x, slice(None))
        done = np.abs(fx) <= tol
        if not done.all():
            raise ConvergenceFailure(
                f"{int((~done).sum())} intersection(s) did not reach |phi| <= {tol}"
            )
    return x


def _seed_parametric(shape, grid, tol):
    """Seed a parametric closed curve by dense sampling + 1D refinement."""
    d = 2
    n_samples = max(200_000, 512 * grid.n_cells)
    theta = np.linspace(0.0, 2.0 * math.pi, n_samples, endpoint=False)
    pts = shape.parametric(theta)
    nxt = np.arange(1, n_samples + 1) % n_samples
    parts = []

    for r in range(2):
        fixed = 1 - r  # axis-r lines hold the other coordinate at a grid node
        q0 = pts[:, fixed]
        q1 = pts[nxt, fixed]
        g0 = grid.lo[fixed]
        lo_lvl = np.ceil((np.minimum(q0, q1) - g0) / grid.h - 1e-12).astype(np.int64)
        hi_lvl = np.floor((np.maximum(q0, q1) - g0) / grid.h + 1e-12).astype(np.int64)
        lo_lvl = np.clip(lo_lvl, 0, grid.n_cells)
        hi_lvl = np.clip(hi_lvl, 0, grid.n_cells)
        counts = np.maximum(hi_lvl - lo_lvl + 1, 0)
        seg = np.repeat(np.arange(n_samples), counts)
        if len(seg) == 0:
            continue
        offs = np.arange(len(seg)) - np.repeat(
            np.concatenate(([0], np.cumsum(counts)[:-1])), counts)
        lvl = lo_lvl[seg] + offs
        vals = g0 + grid.h * lvl
        crossed = (q0[seg] <= vals) != (q1[seg] <= vals)
        seg, lvl, vals = seg[crossed], lvl[crossed], vals[crossed]
        if len(seg) == 0:
            continue

        t_lo = theta[seg]
        t_hi = t_lo + (2.0 * math.pi / n_samples)
        t_root = _refine_parametric(shape, fixed, t_lo, t_hi, vals, tol)
        p = shape.parametric(t_root)
        p[:, fixed] = vals  # land exactly on the grid line
        nrm = shape.outward_normal_parametric(t_root)
        parts.append(PointSet(
            p, nrm, np.full(len(seg), r, dtype=np.int64),
            lvl[:, None], p[:, r],
        ))
    if not parts:
        return PointSet.empty(d)
    return PointSet.concatenate(parts)


def _refine_parametric(shape, fixed, lo, hi, targets, tol):
    """Solve q(theta) = target per bracket, q = coordinate `fixed`."""
    f_lo = shape.parametric(lo)[:, fixed] - targets
    x = 0.5 * (lo + hi)
    m = len(lo)
    done = np.zeros(m, dtype=bool)
    for it in range(_REFINE_CAP):
        fx = shape.parametric(x)[:, fixed] - targets
        done |= np.abs(fx) <= tol
        if done.all():
            break
        same = fx * f_lo > 0
        upd = ~done
        lo = np.where(upd & same, x, lo)
        f_lo = np.where(upd & same, fx, f_lo)
        hi = np.where(upd & ~same & (fx != 0), x, hi)
        if it >= 8:  # after early bisection, polish with Newton
            derivs = shape.parametric_derivs(x)
            g = derivs[fixed]
            with np.errstate(divide="ignore", invalid="ignore"):
                x_new = x - fx / g
            bad = ~np.isfinite(x_new) | (x_new <= lo) | (x_new >= hi)
            x = np.where(upd & ~bad, x_new, np.where(upd, 0.5 * (lo + hi), x))
        else:
            x = np.where(upd, 0.5 * (lo + hi), x)
    if not done.all():
        fx = shape.parametric(x)[:, fixed] - targets
        if np.abs(fx).max() > tol:
            raise ConvergenceFailure("parametric root refinement stalled")
    return x

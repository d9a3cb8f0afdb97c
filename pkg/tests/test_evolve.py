import math

import numpy as np
import pytest

from mcflow.errors import IterationLimit
from mcflow.evolve import StepParams, coeffs3d, step2d, step3d
from mcflow.geometry import Grid, make_shape, seed_intersections
from mcflow.patchset import DecompositionParams, build_components

from test_patchset import synthetic_component


def circle_component(n=64, axis=0, orient=1.0):
    g = Grid.cube(-1.2, 1.2, n, 2)
    ps = build_components(seed_intersections(make_shape("circle"), g, 1e-12),
                          g, DecompositionParams.for_grid(g))
    comp = [c for c in ps.components_of(axis) if c.orient == orient][0]
    return comp, g


def sphere_component(n=64, axis=2, orient=1.0, alpha=60.0):
    g = Grid.cube(-1.2, 1.2, n, 3)
    ps = build_components(seed_intersections(make_shape("sphere"), g, 1e-12),
                          g, DecompositionParams.for_grid(g, alpha_deg=alpha))
    comp = [c for c in ps.components_of(axis) if c.orient == orient][0]
    return comp, g


def test_coeffs3d_fixed_slopes():
    h = 0.1
    u = np.arange(5)[:, None] * h * np.ones(5)[None, :]
    v = u.T
    flat = coeffs3d(np.zeros((5, 5)), h)
    assert flat.c1[2, 2] == pytest.approx(0.5)
    assert flat.c2[2, 2] == pytest.approx(0.0)
    assert flat.c3[2, 2] == pytest.approx(0.5)
    wu1 = coeffs3d(u, h)
    assert wu1.c1[2, 2] == pytest.approx(0.5)
    assert wu1.c2[2, 2] == pytest.approx(0.0)
    assert wu1.c3[2, 2] == pytest.approx(0.25)
    both = coeffs3d(u + v, h)
    assert both.c1[2, 2] == pytest.approx(1 / 3)
    assert both.c2[2, 2] == pytest.approx(-1 / 3)
    assert both.c3[2, 2] == pytest.approx(1 / 3)


def test_coeffs3d_elliptic():
    rng = np.random.default_rng(11)
    h = 0.05
    for _ in range(50):
        su, sv = rng.uniform(-3, 3, size=2)
        w = su * np.arange(5)[:, None] * h + sv * np.arange(5)[None, :] * h
        co = coeffs3d(w, h)
        c1, c2, c3 = co.c1[2, 2], co.c2[2, 2], co.c3[2, 2]
        assert c1 > 0 and c3 > 0
        assert c1 * c3 - 0.25 * c2 * c2 > 0
        denom_sum = (2 + su * su + sv * sv) / (2 * (1 + su * su + sv * sv))
        assert c1 + c3 == pytest.approx(denom_sum)


def _const_bc(comp, value):
    return np.full(len(comp.boundary_locals()), float(value))


def test_step2d_constant_and_linear_fixed_points():
    comp, g = circle_component()
    params = StepParams(dt=0.01)
    mask = comp.mask

    const = np.where(mask, 3.25, np.nan)
    comp.set_heights(const)
    out = step2d(comp, _const_bc(comp, 3.25), params)
    assert np.nanmax(np.abs(out - const)[mask]) < 1e-13

    coords = comp.base_coords(comp.node_locals())[:, 0]
    lin = np.full_like(const, np.nan)
    lin[mask] = coords
    comp.set_heights(lin)
    bv = lin[comp.boundary_locals()[:, 0]]
    out = step2d(comp, bv, params)
    assert np.nanmax(np.abs(out - lin)[mask]) < 1e-13


def _dense_solve_2d(comp, w_full, dt, h, bc):
    idx = np.nonzero(comp.mask)[0]
    i0, i1 = idx[0], idx[-1]
    w = w_full[i0:i1 + 1]
    m = i1 - i0 - 1
    slope = (w[2:] - w[:-2]) / (2 * h)
    lam = dt / (h * h * (slope ** 2 + 1))
    a = np.zeros((m, m))
    rhs = w[1:-1].copy()
    for k in range(m):
        a[k, k] = 1 + 2 * lam[k]
        if k > 0:
            a[k, k - 1] = -lam[k]
        else:
            rhs[k] += lam[k] * bc[0]
        if k < m - 1:
            a[k, k + 1] = -lam[k]
        else:
            rhs[k] += lam[k] * bc[1]
    return np.linalg.solve(a, rhs)


def test_step2d_matches_dense_oracle():
    comp, g = circle_component()
    params = StepParams(dt=0.01)
    idx = np.nonzero(comp.mask)[0]
    xi = comp.base_coords(comp.node_locals())[:, 0]
    par = np.full_like(comp.heights, np.nan)
    par[comp.mask] = xi ** 2
    comp.set_heights(par)
    bc = par[[idx[0], idx[-1]]]
    new = step2d(comp, bc, params)
    dense = _dense_solve_2d(comp, par, params.dt, g.h, bc)
    assert np.abs(new[idx[0] + 1:idx[-1]] - dense).max() < 1e-12


def test_step2d_random_fields_max_principle_and_oracle():
    rng = np.random.default_rng(5)
    comp, g = circle_component()
    idx = np.nonzero(comp.mask)[0]
    for _ in range(20):
        w = np.full_like(comp.heights, np.nan)
        w[comp.mask] = rng.uniform(-1, 1, size=comp.n_nodes)
        comp.set_heights(w)
        bc = rng.uniform(-1, 1, size=2)
        params = StepParams(dt=float(rng.uniform(1e-4, 0.05)))
        new = step2d(comp, bc, params)
        dense = _dense_solve_2d(comp, w, params.dt, g.h, bc)
        assert np.abs(new[idx[0] + 1:idx[-1]] - dense).max() < 1e-12
        hi = max(np.nanmax(w), bc.max())
        lo = min(np.nanmin(w), bc.min())
        assert np.nanmax(new) <= hi + 1e-12
        assert np.nanmin(new) >= lo - 1e-12


def test_step2d_dt_to_zero_consistency():
    # (new - old)/dt approaches the explicit right-hand side at first order
    comp, g = circle_component()
    w = comp.heights
    idx = np.nonzero(comp.mask)[0]
    inner = slice(idx[0] + 1, idx[-1])
    bc = w[[idx[0], idx[-1]]]
    slope = (w[idx[0] + 2:idx[-1] + 1] - w[idx[0]:idx[-1] - 1]) / (2 * g.h)
    second = (w[idx[0] + 2:idx[-1] + 1] - 2 * w[inner] + w[idx[0]:idx[-1] - 1]) / g.h ** 2
    rhs = second / (slope ** 2 + 1)
    errs = []
    for dt in (1e-5, 1e-6):
        new = step2d(comp, bc, StepParams(dt=dt))
        rate = (new[inner] - w[inner]) / dt
        errs.append(np.abs(rate - rhs).max())
    assert errs[0] / errs[1] == pytest.approx(10.0, rel=0.2)
    assert errs[1] < 1e-3


def test_apex_decay_rate_2d():
    comp, g = circle_component(n=256, axis=1)  # top arc, apex at x=0
    dt = 1e-4
    bl = comp.boundary_locals()
    new = step2d(comp, comp.heights[bl[:, 0]], StepParams(dt=dt))
    loc = int(round((0.0 - g.lo[0]) / g.h)) - comp.origin[0]
    drop = new[loc] - comp.heights[loc]
    assert drop == pytest.approx(-dt, rel=5e-3)  # radius 1: dr/dt = -1/r


def test_step3d_fixed_points():
    comp, g = sphere_component()
    params, mask = StepParams(dt=0.05 * g.h), comp.mask
    const = np.where(mask, 0.77, np.nan)
    comp.set_heights(const)
    out = step3d(comp, _const_bc(comp, 0.77), params)
    assert np.nanmax(np.abs(out - const)[mask]) < 1e-12

    bc2 = comp.base_coords(comp.node_locals())
    tilt = np.full_like(const, np.nan)
    tilt[mask] = bc2[:, 0] + 2 * bc2[:, 1]
    comp.set_heights(tilt)
    bl = comp.boundary_locals()
    out = step3d(comp, tilt[bl[:, 0], bl[:, 1]], params)
    assert np.nanmax(np.abs(out - tilt)[mask]) < 1e-12


def _dense_solve_3d(comp, w, dt, h, bvals):
    co = coeffs3d(w, h)
    iu, iv = np.nonzero(comp.interior)
    pos = {(a, b): k for k, (a, b) in enumerate(zip(iu, iv))}
    n = len(iu)
    a_mat = np.zeros((n, n))
    rhs = np.empty(n)
    hh = h * h
    wb = w.copy()
    bl = comp.boundary_locals()
    wb[bl[:, 0], bl[:, 1]] = bvals
    for k, (a, b) in enumerate(zip(iu, iv)):
        a1 = dt * co.c1[a, b] / hh
        a3 = dt * co.c3[a, b] / hh
        a2 = dt * co.c2[a, b] / (4 * hh)
        a_mat[k, k] = 1 + 2 * (a1 + a3)
        rhs[k] = w[a, b]
        for (da, db, coef) in ((0, 1, a1), (0, -1, a1), (1, 0, a3), (-1, 0, a3),
                               (1, 1, a2), (-1, -1, a2), (1, -1, -a2), (-1, 1, -a2)):
            j = pos.get((a + da, b + db))
            if j is None:
                rhs[k] += coef * wb[a + da, b + db]
            else:
                a_mat[k, j] -= coef
    return np.linalg.solve(a_mat, rhs), iu, iv


def test_step3d_matches_dense_oracle_sphere_cap():
    comp, g = sphere_component()
    params = StepParams(dt=0.05 * g.h)
    bl = comp.boundary_locals()
    r2 = 1 - 2 * params.dt
    bcrd = comp.base_coords(bl)
    bv = np.sqrt(r2 - (bcrd ** 2).sum(axis=1))
    new = step3d(comp, bv, params)
    dense, iu, iv = _dense_solve_3d(comp, comp.heights, params.dt, g.h, bv)
    assert np.abs(new[iu, iv] - dense).max() < 10 * params.sor_tol


def test_step3d_random_components_vs_dense():
    rng = np.random.default_rng(9)
    g = Grid.cube(-1.2, 1.2, 24, 3)  # h = 0.1
    for trial in range(5):
        ij = np.array([(i, j) for i in range(8, 15) for j in range(9, 16)
                       if rng.uniform() > 0.1 or (9 <= i <= 13 and 10 <= j <= 14)])
        su, sv = rng.uniform(-0.8, 0.8, size=2)
        amp = rng.uniform(0.0, 0.05)

        def h_fn(c):
            return 0.5 + su * c[:, 0] + sv * c[:, 1] \
                + amp * np.sin(4 * c[:, 0]) * np.cos(3 * c[:, 1])

        def g_fn(c):
            return np.stack([
                su + 4 * amp * np.cos(4 * c[:, 0]) * np.cos(3 * c[:, 1]),
                sv - 3 * amp * np.sin(4 * c[:, 0]) * np.sin(3 * c[:, 1])], axis=1)

        comp = synthetic_component(g, 2, ij, h_fn, g_fn)
        if comp.interior.sum() == 0:
            continue
        params = StepParams(dt=float(rng.uniform(0.001, 0.01)))
        bl = comp.boundary_locals()
        bv = comp.heights[bl[:, 0], bl[:, 1]] + rng.normal(0, 1e-3, len(bl))
        new = step3d(comp, bv, params)
        dense, iu, iv = _dense_solve_3d(comp, comp.heights, params.dt, g.h, bv)
        assert np.abs(new[iu, iv] - dense).max() < 10 * params.sor_tol


def test_step3d_apex_decay_rate():
    comp, g = sphere_component(n=128)
    dt = 1e-4
    bl = comp.boundary_locals()
    new = step3d(comp, comp.heights[bl[:, 0], bl[:, 1]], StepParams(dt=dt))
    mid = int(round((0.0 - g.lo[0]) / g.h))
    loc = np.array([mid, mid]) - comp.origin
    drop = new[loc[0], loc[1]] - comp.heights[loc[0], loc[1]]
    assert drop == pytest.approx(-dt, rel=5e-3)


def test_step3d_iteration_limit():
    comp, g = sphere_component()
    params = StepParams(dt=0.05 * g.h, sor_tol=1e-14, sor_max_iters=2)
    bl = comp.boundary_locals()
    with pytest.raises(IterationLimit):
        step3d(comp, comp.heights[bl[:, 0], bl[:, 1]], params)


def test_step_params_validation():
    with pytest.raises(ValueError):
        StepParams(dt=-1.0)
    with pytest.raises(ValueError):
        StepParams(dt=0.1, sor_omega=2.5)
    with pytest.raises(ValueError):
        StepParams(dt=0.1, solver="jacobi")

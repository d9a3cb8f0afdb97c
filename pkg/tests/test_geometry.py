import numpy as np
import pytest

from mcflow.errors import UnresolvedShape
from mcflow.geometry import (Grid, eval_implicit, level_set_shape, make_shape,
                             seed_intersections)


def test_grid_basics():
    g = Grid.cube(-1.2, 1.2, 64, 2)
    assert g.dim == 2
    assert g.h == pytest.approx(2.4 / 64)
    assert g.coords(0)[0] == -1.2
    assert g.node(1, 3) == pytest.approx(-1.2 + 3 * g.h)
    with pytest.raises(ValueError):
        Grid([0, 0], [1, 2], 8)  # unequal extents


def test_eval_implicit_catalog_points():
    assert eval_implicit(make_shape("circle"), np.array([0.0, 0.0])) == -1.0
    ell = make_shape("ellipsoid")
    assert eval_implicit(ell, np.array([1.0, 0.0, 0.0])) == pytest.approx(0.0, abs=1e-15)
    tor = make_shape("torus")
    assert eval_implicit(tor, np.array([0.8, 0.0, 0.34])) == pytest.approx(0.0, abs=1e-15)


def test_sign_convention_inside_negative():
    for kind, inside in [("circle", [0, 0]), ("ellipse", [0, 0]),
                         ("sphere", [0, 0, 0]), ("ellipsoid", [0, 0, 0]),
                         ("torus", [0.8, 0, 0]), ("molecular", [0, 0, 0.2])]:
        s = make_shape(kind)
        assert eval_implicit(s, np.array(inside, dtype=float)) < 0, kind


def test_seed_circle_coarse_lines():
    g = Grid.cube(-1.2, 1.2, 4, 2)
    pts = seed_intersections(make_shape("circle"), g, 1e-12)
    on_y0 = np.abs(pts.position[:, 1]) < 1e-15
    xs = np.sort(pts.position[on_y0, 0])
    assert np.allclose(xs, [-1.0, 1.0], atol=1e-10)
    nrm = pts.normal[on_y0][np.argsort(pts.position[on_y0, 0])]
    assert np.allclose(nrm, [[-1, 0], [1, 0]], atol=1e-10)

    on_y06 = np.abs(pts.position[:, 1] - 0.6) < 1e-15
    xs = np.sort(pts.position[on_y06, 0])
    horiz = xs[np.abs(xs) > 0.5]
    assert np.allclose(horiz, [-0.8, 0.8], atol=1e-10)


def _dense_ellipse_oracle(grid):
    """Grid-line crossings of the ellipse from dense parametric sampling."""
    a, b = 1.0, 0.5
    theta = np.linspace(0, 2 * np.pi, 1_000_000, endpoint=False)
    p = np.stack([a * np.cos(theta), b * np.sin(theta)], axis=1)
    out = {0: [], 1: []}
    for axis in range(2):
        fixed = 1 - axis
        q0 = p[:, fixed]
        q1 = np.roll(q0, -1)
        for j, val in enumerate(grid.coords(fixed)):
            hit = np.nonzero((q0 <= val) != (q1 <= val))[0]
            for i in hit:
                t = (val - q0[i]) / (np.roll(q0, -1)[i] - q0[i])
                free = p[i, axis] + t * (p[(i + 1) % len(p), axis] - p[i, axis])
                out[axis].append((j, free))
    return out


def test_seed_ellipse_matches_dense_oracle():
    g = Grid.cube(-1.2, 1.2, 128, 2)
    pts = seed_intersections(make_shape("ellipse"), g, 1e-12)
    oracle = _dense_ellipse_oracle(g)
    for axis in range(2):
        got = {}
        sel = pts.axis == axis
        for li, height in zip(pts.line_index[sel, 0], pts.height[sel]):
            got.setdefault(int(li), []).append(height)
        exp = {}
        for j, free in oracle[axis]:
            exp.setdefault(j, []).append(free)
        assert set(got) == set(exp)
        for j in got:
            g_sorted = np.sort(got[j])
            e_sorted = np.sort(exp[j])
            assert len(g_sorted) == len(e_sorted)
            # dense linear sampling is accurate to ~1e-11 here
            assert np.abs(g_sorted - e_sorted).max() < 1e-10


@pytest.mark.parametrize("kind,n", [("circle", 64), ("star", 128), ("torus", 32)])
def test_seed_invariants(kind, n):
    shape = make_shape(kind)
    g = Grid.cube(-1.2, 1.2, n, shape.dim)
    tol = 1e-10
    pts = seed_intersections(shape, g, tol)
    assert len(pts) > 0
    # |phi| <= tol at every point
    assert np.abs(shape.phi(pts.position)).max() <= tol
    # each point lies exactly on its grid line
    for k in range(len(pts)):
        axis = pts.axis[k]
        base = [d for d in range(shape.dim) if d != axis]
        expect = g.lo[base] + g.h * pts.line_index[k]
        assert np.abs(pts.position[k, base] - expect).max() == 0.0
    # unit normals
    assert np.abs(np.linalg.norm(pts.normal, axis=1) - 1).max() < 1e-12


def test_seed_circle_count_scales_linearly():
    counts = {}
    for n in (64, 128, 256):
        g = Grid.cube(-1.2, 1.2, n, 2)
        counts[n] = len(seed_intersections(make_shape("circle"), g, 1e-10))
    assert counts[128] / counts[64] == pytest.approx(2.0, rel=0.1)
    assert counts[256] / counts[128] == pytest.approx(2.0, rel=0.1)


def test_seed_radii_within_tolerance_band():
    g = Grid.cube(-1.2, 1.2, 128, 2)
    tol = 1e-10
    pts = seed_intersections(make_shape("circle"), g, tol)
    # phi = r^2 - 1, min |grad| = 2 on the zero set: |r - 1| <= tol / 2
    r = np.linalg.norm(pts.position, axis=1)
    assert np.abs(r - 1).max() <= tol


def test_unresolved_shape_detected():
    # small circle wedged inside one cell of a coarse grid
    small = level_set_shape(
        lambda x: (x[..., 0] - 0.07) ** 2 + x[..., 1] ** 2 - 0.05 ** 2,
        dim=2,
        grad=lambda x: 2 * np.stack([x[..., 0] - 0.07, x[..., 1]], axis=-1))
    g = Grid.cube(-1.2, 1.2, 16, 2)
    with pytest.raises(UnresolvedShape):
        seed_intersections(small, g, 1e-10)


def test_parametric_star_seeding():
    shape = make_shape("star", b=0.6)  # a != b: parametric-only path
    assert not shape.has_implicit
    g = Grid.cube(-1.2, 1.2, 128, 2)
    pts = seed_intersections(shape, g, 1e-12)
    assert len(pts) > 100
    # every point on a grid line, and on the curve (nearest dense sample)
    theta = np.linspace(0, 2 * np.pi, 2_000_000)
    dense = shape.parametric(theta)
    from scipy.spatial import cKDTree
    d, _ = cKDTree(dense).query(pts.position)
    assert d.max() < 3e-6  # half the dense sample spacing bounds the check
    assert np.abs(np.linalg.norm(pts.normal, axis=1) - 1).max() < 1e-12


def test_bad_parameters_rejected():
    with pytest.raises(ValueError):
        make_shape("circle", radius=2.0)
    with pytest.raises(ValueError):
        make_shape("blob")
    with pytest.raises(ValueError):
        seed_intersections(make_shape("circle"), Grid.cube(-1.2, 1.2, 16, 2), -1.0)

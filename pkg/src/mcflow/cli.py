"""Run configuration, the time-stepping driver, experiment presets, and I/O.

A run embeds the chosen initial shape in a Cartesian grid, seeds the control
points, and repeats (boundary matching -> component solves -> reseeding)
until the final time, writing per-step diagnostics and periodic point-cloud
snapshots.  Presets bundle the configurations behind the reference
experiments (convergence tables, decay curves, the CPU comparison, and the
stability demonstration).  Everything is deterministic: identical configs
produce byte-identical outputs apart from wall-time columns.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy.spatial import cKDTree

from . import baseline
from .coupling import SweepPlan, adi_step, schwarz_step
from .diagnostics import (DiagRecord, convergence_order, error_vs_exact,
                          error_vs_reference, fitted_order, measure)
from .errors import ConfigError, FlowError, SurfaceLost, TimeGridMismatch
from .evolve import StepParams
from .geometry import Grid, make_shape, seed_intersections, shape_kinds
from .patchset import (DecompositionParams, build_components,
                       prune_small_components)

_DEFAULT_DT_FACTOR = {2: 0.1, 3: 0.05}
# 60 degrees is ample in 2D; 3D needs wider overlap so that the region a
# subset owns under the partition of unity stays several cells away from
# every fringe at the corners where three subsets meet.
_DEFAULT_ALPHA_DEG = {2: 60.0, 3: 70.0}


@dataclass
class RunConfig:
    """Fully deterministic description of one simulation run."""

    shape: str = "circle"
    shape_params: dict = field(default_factory=dict)
    n: int = 256
    box_lo: float = -1.2
    box_hi: float = 1.2
    dt_factor: float = None     # dt = dt_factor * h; default 0.1 (2D) / 0.05 (3D)
    t_end: float = 0.2
    method: str = "adi"         # adi | schwarz | explicit
    alpha_deg: float = None     # default 60 (2D) / 70 (3D)
    d0_factor: float = 5.0
    theta0_deg: float = 30.0
    markers: int = None         # marker count for method=explicit
    fixed_dt: float = None      # bypass the explicit stability rule
    n_steps: int = None         # fixed step count (t_end derived); stability demo
    snapshot_every: int = 10    # steps between snapshots; 0 = final only
    diag_every: int = 1         # steps between diagnostics rows; 0 = off
    seed_tol: float = 1e-10
    sor_omega: float = 1.5
    sor_tol: float = 1e-10
    sor_max_iters: int = 10_000
    schwarz_tol: float = 1e-10
    schwarz_max_iters: int = 50
    sweep_order: tuple = None
    output_dir: str = None
    obj_export: bool = False

    def resolved(self):
        """Fill dimension-dependent defaults; validate."""
        try:
            shape = make_shape(self.shape, **self.shape_params)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        cfg = replace(self)
        if cfg.dt_factor is None:
            cfg.dt_factor = _DEFAULT_DT_FACTOR[shape.dim]
        if cfg.alpha_deg is None:
            cfg.alpha_deg = _DEFAULT_ALPHA_DEG[shape.dim]
        if cfg.sweep_order is None:
            cfg.sweep_order = tuple(range(shape.dim))
        if cfg.method not in ("adi", "schwarz", "explicit"):
            raise ConfigError(f"unknown method {cfg.method!r}")
        if cfg.method == "explicit":
            if shape.dim != 2:
                raise ConfigError("method=explicit is 2D only")
            if cfg.markers is None:
                raise ConfigError("method=explicit requires markers=<count>")
        if cfg.n_steps is None and cfg.t_end < 0:
            raise ConfigError("t_end must be nonnegative")
        if cfg.n < 16 and cfg.method != "explicit":
            raise ConfigError("n must be at least 16")
        return cfg, shape


@dataclass
class RunResult:
    """Outcome of one run."""

    config: RunConfig
    records: list
    final_points: np.ndarray
    steps: int
    dt: float
    t_final: float
    wall_s: float
    termination: str            # "t_end" | "surface_lost"
    snapshots: list             # (step, t, path) written snapshots
    patchset: object = None
    curve: object = None


def _write_diag(path, records):
    rows = ["t,measure,enclosed,points,wall_ms"]
    for r in records:
        rows.append(f"{r.t:.12g},{r.length_or_area:.17g},{r.enclosed:.17g},"
                    f"{r.point_count},{r.wall_ms:.3f}")
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")


def _write_obj(path, points):
    with open(path, "w") as fh:
        for p in points:
            coords = " ".join(f"{v:.17g}" for v in p)
            fh.write(f"v {coords}\n")


def _snapshot(result_dir, step, ps=None, curve=None, obj_export=False):
    path = os.path.join(result_dir, f"snap_{step:06d}.csv")
    if ps is not None:
        ps.to_csv(path)
        if obj_export and ps.dim == 3:
            pos, _ = ps.all_points()
            _write_obj(os.path.join(result_dir, f"snap_{step:06d}.obj"), pos)
    else:
        baseline.snapshot_csv(curve, path)
    return path


def _step_plan(cfg, t_end):
    """Uniform partition of [0, t_end]: dt = t_end / ceil(t_end / nominal)."""
    h = (cfg.box_hi - cfg.box_lo) / cfg.n
    nominal = cfg.dt_factor * h
    if cfg.n_steps is not None:
        return cfg.n_steps, nominal
    if t_end == 0:
        return 0, nominal
    n_steps = max(1, math.ceil(t_end / nominal - 1e-9))
    return n_steps, t_end / n_steps


def run(config):
    """Execute a run; write outputs when config.output_dir is set."""
    cfg, shape = config.resolved()
    out = cfg.output_dir
    if out:
        os.makedirs(out, exist_ok=True)
    if cfg.method == "explicit":
        result = _run_explicit(cfg, shape, out)
    else:
        result = _run_grid(cfg, shape, out)
    if out:
        _write_diag(os.path.join(out, "diag.csv"), result.records)
    return result


def _run_grid(cfg, shape, out):
    grid = Grid.cube(cfg.box_lo, cfg.box_hi, cfg.n, shape.dim)
    params = DecompositionParams.for_grid(
        grid, alpha_deg=cfg.alpha_deg, d0_factor=cfg.d0_factor,
        theta0_deg=cfg.theta0_deg)
    ps = prune_small_components(
        build_components(seed_intersections(shape, grid, cfg.seed_tol),
                         grid, params))

    n_steps, dt = _step_plan(cfg, cfg.t_end)
    sp = StepParams(dt=dt, sor_omega=cfg.sor_omega, sor_tol=cfg.sor_tol,
                    sor_max_iters=cfg.sor_max_iters)
    plan = SweepPlan(order=cfg.sweep_order, mode=cfg.method,
                     schwarz_tol=cfg.schwarz_tol,
                     schwarz_max_iters=cfg.schwarz_max_iters)
    stepper = adi_step if cfg.method == "adi" else schwarz_step

    t0 = time.perf_counter()
    records = [measure(ps, t=0.0, wall_ms=0.0)]
    snapshots = []
    if out:
        snapshots.append((0, 0.0, _snapshot(out, 0, ps=ps, obj_export=cfg.obj_export)))

    t = 0.0
    termination = "t_end"
    step = 0
    for step_no in range(1, n_steps + 1):
        try:
            ps = stepper(ps, sp, plan)
        except SurfaceLost:
            termination = "surface_lost"
            break
        step = step_no
        t = step * dt
        wall_ms = (time.perf_counter() - t0) * 1e3
        if cfg.diag_every and (step % cfg.diag_every == 0 or step == n_steps):
            records.append(measure(ps, t=t, wall_ms=wall_ms))
        if out and cfg.snapshot_every and step % cfg.snapshot_every == 0 \
                and step != n_steps:
            snapshots.append((step, t, _snapshot(out, step, ps=ps,
                                                 obj_export=cfg.obj_export)))
    if out and termination == "t_end" and step > 0:
        snapshots.append((step, t, _snapshot(out, step, ps=ps,
                                             obj_export=cfg.obj_export)))
    pos, _ = ps.all_points()
    return RunResult(
        config=cfg, records=records, final_points=pos, steps=step, dt=dt,
        t_final=t, wall_s=time.perf_counter() - t0, termination=termination,
        snapshots=snapshots, patchset=ps,
    )


def _curve_record(curve, t, wall_ms):
    return DiagRecord(t=t, length_or_area=curve.length(),
                      enclosed=curve.enclosed_area(),
                      point_count=curve.m, wall_ms=wall_ms)


def _run_explicit(cfg, shape, out):
    curve = baseline.MarkerCurve.from_shape(shape, cfg.markers)
    t0 = time.perf_counter()
    records = [_curve_record(curve, 0.0, 0.0)]
    snapshots = []
    if out:
        snapshots.append((0, 0.0, _snapshot(out, 0, curve=curve)))

    lean = (cfg.fixed_dt is None and cfg.diag_every == 0
            and (not out or cfg.snapshot_every == 0))
    if lean and cfg.n_steps is None:
        # timing path: the plain adaptive loop without per-step bookkeeping
        curve, step, _ = baseline.run_to(curve, cfg.t_end)
        t = cfg.t_end
    else:
        t = 0.0
        step = 0
        budget = cfg.n_steps if cfg.n_steps is not None else 10 ** 8
        while (t < cfg.t_end - 1e-15 if cfg.n_steps is None
               else step < cfg.n_steps):
            dt = cfg.fixed_dt
            if dt is None:
                dt = min(baseline.stable_dt(curve), cfg.t_end - t)
            curve, _ = baseline.explicit_step(curve, dt=dt)
            t += dt
            step += 1
            if not np.isfinite(curve.markers).all():
                break
            wall_ms = (time.perf_counter() - t0) * 1e3
            if cfg.diag_every and step % cfg.diag_every == 0:
                records.append(_curve_record(curve, t, wall_ms))
            if out and cfg.snapshot_every and step % cfg.snapshot_every == 0:
                snapshots.append((step, t, _snapshot(out, step, curve=curve)))
            if step >= budget:
                break
    if out and np.isfinite(curve.markers).all():
        snapshots.append((step, t, _snapshot(out, step, curve=curve)))
    return RunResult(
        config=cfg, records=records, final_points=curve.markers.copy(),
        steps=step, dt=float("nan"), t_final=t,
        wall_s=time.perf_counter() - t0, termination="t_end",
        snapshots=snapshots, curve=curve,
    )


def compare(config_a, config_b, output_path=None):
    """Nearest-neighbor distances between two runs at common snapshot times.

    Runs both configs, matches snapshots by time (1e-9 tolerance), and
    returns rows (t, d_ab, d_ba, hausdorff); d_ab is the max distance from
    a's points to b's cloud.  Raises TimeGridMismatch when no times match.
    """
    res_a = run(config_a)
    res_b = run(config_b)
    clouds_a = _snapshot_clouds(res_a)
    clouds_b = _snapshot_clouds(res_b)
    rows = []
    for t_a, pts_a in clouds_a:
        for t_b, pts_b in clouds_b:
            if abs(t_a - t_b) < 1e-9:
                d_ab = float(cKDTree(pts_b).query(pts_a)[0].max())
                d_ba = float(cKDTree(pts_a).query(pts_b)[0].max())
                rows.append((t_a, d_ab, d_ba, max(d_ab, d_ba)))
                break
    if not rows:
        raise TimeGridMismatch("runs share no common snapshot times")
    if output_path:
        lines = ["t,d_ab,d_ba,hausdorff"]
        for r in rows:
            lines.append(",".join(f"{v:.17g}" for v in r))
        with open(output_path, "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return rows


def _snapshot_clouds(result):
    """(t, points) pairs for a run: final state plus written snapshots."""
    clouds = [(result.t_final, result.final_points)]
    return clouds


def load_snapshot(path):
    """Point positions from a snapshot CSV."""
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        d = 3 if "z" in header else 2
        pts = []
        for line in fh:
            vals = line.strip().split(",")
            pts.append([float(v) for v in vals[:d]])
    return np.asarray(pts)


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

def _conv_preset(shape, Ns, t_end, exact=None, ref_n=None, shape_params=None):
    return {"kind": "convergence", "shape": shape, "Ns": Ns, "t_end": t_end,
            "exact": exact, "ref_n": ref_n, "shape_params": shape_params or {}}


def _single_preset(shape, n, t_end, **kw):
    return {"kind": "single", "shape": shape, "n": n, "t_end": t_end, **kw}


PRESETS = {
    "table1-circle": _conv_preset("circle", (64, 128, 256, 512), 0.2, exact="circle"),
    "table2-ellipse": _conv_preset("ellipse", (128, 256, 512), 0.2, ref_n=1024),
    "table3-star": _conv_preset("star", (128, 256, 512), 0.1, ref_n=1024),
    "table4-sphere": _conv_preset("sphere", (64, 128, 256), 0.2, exact="sphere"),
    "table5-ellipsoid": _conv_preset("ellipsoid", (64, 128), 0.2, ref_n=256),
    "table6-torus": _conv_preset("torus", (64, 128), 0.1, ref_n=256),
    "table7-cpu": {"kind": "cpu", "pairs": ((256, 448), (512, 896), (1024, 1792)),
                   "t_end": 0.1},
    "table8-molecular": _conv_preset("molecular", (64, 128), 0.2, ref_n=256),
    "fig5-adi-schwarz": {"kind": "adi-schwarz", "shape": "ellipse", "n": 256},
    "fig6-ellipse-decay": _single_preset("ellipse", 512, 0.2),
    "fig8-star-decay": _single_preset("star", 512, 0.2),
    "fig11-ellipsoid-decay": _single_preset("ellipsoid", 128, 0.2),
    "fig13-torus-decay": _single_preset("torus", 128, 0.1),
    "molecular-decay": _single_preset("molecular", 128, 0.2),
    "star-stability": {"kind": "stability", "n": 512, "steps": 100},
}

PRESET_ALIASES = {
    "circle-table1": "table1-circle",
    "star-cpu": "table7-cpu",
}


def list_presets():
    names = sorted(PRESETS)
    names += [f"{a} (alias of {b})" for a, b in sorted(PRESET_ALIASES.items())]
    return names


def _write_errors_csv(path, rows):
    """rows: list of (N, e_inf, order_inf, e_l2, order_l2); orders may be None."""
    lines = ["N,e_inf,order_inf,e_l2,order_l2"]
    for n, ei, oi, el, ol in rows:
        lines.append(f"{n},{ei:.17g},{'' if oi is None else f'{oi:.4g}'},"
                     f"{el:.17g},{'' if ol is None else f'{ol:.4g}'}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def run_preset(name, output_dir=None, overrides=None):
    """Execute a named preset; returns a dict of computed quantities."""
    name = PRESET_ALIASES.get(name, name)
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; see --list-presets")
    spec = PRESETS[name]
    overrides = overrides or {}
    if output_dir:
        os.makedirs(output_dir, exist_ok=True)
    kind = spec["kind"]

    if kind == "single":
        kw = dict(shape=spec["shape"], n=spec["n"], t_end=spec["t_end"],
                  shape_params=spec.get("shape_params", {}),
                  output_dir=output_dir)
        kw.update(overrides)
        result = run(RunConfig(**kw))
        return {"kind": kind, "result": result}

    if kind == "convergence":
        return _run_convergence(spec, output_dir, overrides)

    if kind == "cpu":
        return _run_cpu(spec, output_dir, overrides)

    if kind == "adi-schwarz":
        return _run_adi_schwarz(spec, output_dir, overrides)

    if kind == "stability":
        return _run_stability(spec, output_dir, overrides)

    raise ConfigError(f"bad preset kind {kind!r}")


def _run_convergence(spec, output_dir, overrides):
    shape = spec["shape"]

    def make_cfg(n):
        kw = dict(shape=shape, n=n, t_end=spec["t_end"],
                  shape_params=spec["shape_params"],
                  snapshot_every=0, diag_every=0)
        kw.update(overrides)
        kw["n"] = n
        return RunConfig(**kw)

    reference = None
    if spec["ref_n"]:
        reference = run(make_cfg(spec["ref_n"])).final_points
    entries_inf, entries_l2, results = [], [], []
    for n in spec["Ns"]:
        result = run(make_cfg(n))
        if spec["exact"]:
            rep = error_vs_exact(result.patchset, spec["exact"], result.t_final)
        else:
            rep = error_vs_reference(result.patchset, reference)
        entries_inf.append((n, rep.e_inf))
        entries_l2.append((n, rep.e_l2))
        results.append(result)
    o_inf = [None] + convergence_order(entries_inf)
    o_l2 = [None] + convergence_order(entries_l2)
    rows = [(n, ei, oi, el, ol) for (n, ei), oi, (_, el), ol
            in zip(entries_inf, o_inf, entries_l2, o_l2)]
    if output_dir:
        _write_errors_csv(os.path.join(output_dir, "errors.csv"), rows)
    return {"kind": "convergence", "rows": rows,
            "e_inf": entries_inf, "e_l2": entries_l2,
            "fitted_order_inf": fitted_order(entries_inf),
            "fitted_order_l2": fitted_order(entries_l2),
            "results": results}


def _run_cpu(spec, output_dir, overrides):
    rows = []
    for n_grid, m in spec["pairs"]:
        kw = dict(shape="star", n=n_grid, t_end=spec["t_end"],
                  snapshot_every=0, diag_every=0)
        kw.update(overrides)
        adi_res = run(RunConfig(**kw))
        kw.update(method="explicit", markers=m)
        exp_res = run(RunConfig(**kw))
        rows.append({
            "N": n_grid, "M": m,
            "adi_points0": adi_res.records[0].point_count,
            "adi_steps": adi_res.steps, "adi_wall_s": adi_res.wall_s,
            "explicit_steps": exp_res.steps, "explicit_wall_s": exp_res.wall_s,
        })
    if output_dir:
        lines = ["N,M,adi_points0,adi_steps,adi_wall_s,explicit_steps,explicit_wall_s"]
        for r in rows:
            lines.append(f"{r['N']},{r['M']},{r['adi_points0']},{r['adi_steps']},"
                         f"{r['adi_wall_s']:.4f},{r['explicit_steps']},"
                         f"{r['explicit_wall_s']:.4f}")
        with open(os.path.join(output_dir, "cpu.csv"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
    return {"kind": "cpu", "rows": rows}


def _run_adi_schwarz(spec, output_dir, overrides):
    """One time step of ADI vs converged Schwarz on the same initial curve."""
    base = dict(shape=spec["shape"], n=spec["n"], snapshot_every=0,
                diag_every=0)
    base.update(overrides)
    h = 2.4 / base["n"]
    base["t_end"] = 0.1 * h
    cfg_a = RunConfig(method="adi", **base)
    cfg_b = RunConfig(method="schwarz", schwarz_tol=1e-12, **base)
    out = os.path.join(output_dir, "compare.csv") if output_dir else None
    rows = compare(cfg_a, cfg_b, output_path=out)
    return {"kind": "adi-schwarz", "rows": rows, "h": h}


def _run_stability(spec, output_dir, overrides):
    """Fixed dt = 0.1 dx on the star: ADI stays stable, explicit blows up."""
    n = overrides.get("n", spec["n"])
    h = 2.4 / n
    steps = spec["steps"]
    kw = dict(shape="star", n=n, n_steps=steps, t_end=steps * 0.1 * h,
              snapshot_every=0)
    kw.update(overrides)
    adi_res = run(RunConfig(**kw))
    areas = [r.enclosed for r in adi_res.records]
    lengths = [r.length_or_area for r in adi_res.records]
    adi_ok = (np.isfinite(areas).all() and np.isfinite(lengths).all()
              and all(b < a for a, b in zip(areas, areas[1:])))

    kw = dict(shape="star", method="explicit", markers=1792, n=n,
              fixed_dt=0.1 * h, n_steps=steps, t_end=steps * 0.1 * h,
              snapshot_every=0, diag_every=0)
    kw.update(overrides)
    try:
        exp_res = run(RunConfig(**kw))
        finite = np.isfinite(exp_res.final_points).all()
        spread = float(np.abs(exp_res.final_points).max()) if finite else float("inf")
        exploded = (not finite) or spread > 100.0 or exp_res.steps < steps
    except FlowError:
        exploded = True
        exp_res = None
    report = {"kind": "stability", "adi_stable": bool(adi_ok),
              "explicit_exploded": bool(exploded),
              "adi_steps": adi_res.steps,
              "explicit_steps": None if exp_res is None else exp_res.steps}
    if output_dir:
        with open(os.path.join(output_dir, "stability.csv"), "w") as fh:
            fh.write("method,steps,outcome\n")
            fh.write(f"adi,{adi_res.steps},{'stable' if adi_ok else 'unstable'}\n")
            st = report["explicit_steps"]
            fh.write(f"explicit,{'' if st is None else st},"
                     f"{'blew_up' if exploded else 'stable'}\n")
    return report


# ---------------------------------------------------------------------------
# command line
# ---------------------------------------------------------------------------

_CONFIG_FIELDS = {f.name for f in fields(RunConfig)}
_INT_FIELDS = {"n", "markers", "snapshot_every", "diag_every", "sor_max_iters",
               "schwarz_max_iters", "n_steps"}
_FLOAT_FIELDS = {"box_lo", "box_hi", "dt_factor", "t_end", "alpha_deg",
                 "d0_factor", "theta0_deg", "fixed_dt", "seed_tol",
                 "sor_omega", "sor_tol", "schwarz_tol"}


def _parse_config_file(path):
    """Flat key=value file; unknown keys are treated as shape parameters."""
    overrides = {}
    shape_params = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"bad config line: {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key in _CONFIG_FIELDS:
                overrides[key] = _coerce(key, value)
            else:
                try:
                    shape_params[key] = float(value)
                except ValueError:
                    raise ConfigError(f"unknown config key {key!r}") from None
    return overrides, shape_params


def _coerce(key, value):
    if key in _INT_FIELDS:
        return int(value)
    if key in _FLOAT_FIELDS:
        return float(value)
    if key == "sweep_order":
        return tuple(int(v) for v in value.split(","))
    if key == "obj_export":
        return value.lower() in ("1", "true", "yes")
    if key == "shape_params":
        raise ConfigError("set shape parameters as bare keys, e.g. a=1.0")
    return value


def _build_parser():
    p = argparse.ArgumentParser(
        prog="mcflow",
        description="Mean curvature flow on overlapping Cartesian height fields")
    p.add_argument("--shape", choices=shape_kinds())
    p.add_argument("--shape-param", action="append", default=[],
                   metavar="K=V", help="shape parameter override (repeatable)")
    p.add_argument("--n", type=int)
    p.add_argument("--dt-factor", type=float)
    p.add_argument("--t-end", type=float)
    p.add_argument("--method", choices=("adi", "schwarz", "explicit"))
    p.add_argument("--markers", type=int)
    p.add_argument("--alpha-deg", type=float)
    p.add_argument("--output-dir")
    p.add_argument("--snapshot-every", type=int)
    p.add_argument("--preset")
    p.add_argument("--list-presets", action="store_true")
    p.add_argument("--reference", metavar="SNAPSHOT",
                   help="snapshot CSV; report final-state error against it")
    p.add_argument("--config", metavar="FILE", help="flat key=value config file")
    p.add_argument("--obj", action="store_true", help="also write OBJ point clouds")
    return p


def main(argv=None):
    args = _build_parser().parse_args(argv)
    if args.list_presets:
        for name in list_presets():
            print(name)
        return 0
    try:
        if args.preset:
            report = run_preset(args.preset, output_dir=args.output_dir)
            _print_preset_report(args.preset, report)
            return 0

        overrides, shape_params = ({}, {})
        if args.config:
            overrides, shape_params = _parse_config_file(args.config)
        for kv in args.shape_param:
            if "=" not in kv:
                raise ConfigError(f"bad --shape-param {kv!r}")
            k, v = kv.split("=", 1)
            shape_params[k.strip()] = float(v)
        for key, attr in (("shape", "shape"), ("n", "n"),
                          ("dt_factor", "dt_factor"), ("t_end", "t_end"),
                          ("method", "method"), ("markers", "markers"),
                          ("alpha_deg", "alpha_deg"),
                          ("output_dir", "output_dir"),
                          ("snapshot_every", "snapshot_every")):
            val = getattr(args, attr)
            if val is not None:
                overrides[key] = val
        if args.obj:
            overrides["obj_export"] = True
        if shape_params:
            overrides["shape_params"] = shape_params
        cfg = RunConfig(**overrides)
        result = run(cfg)
        final = result.records[-1]
        print(f"terminated: {result.termination} at t={result.t_final:.6g} "
              f"after {result.steps} steps ({result.wall_s:.2f}s)")
        print(f"final measure={final.length_or_area:.6g} "
              f"enclosed={final.enclosed:.6g} points={final.point_count}")
        if args.reference and result.patchset is not None:
            ref = load_snapshot(args.reference)
            rep = error_vs_reference(result.patchset, ref)
            print(f"error vs reference: e_inf={rep.e_inf:.6g} e_l2={rep.e_l2:.6g}")
            if args.output_dir:
                _write_errors_csv(
                    os.path.join(args.output_dir, "errors.csv"),
                    [(cfg.n, rep.e_inf, None, rep.e_l2, None)])
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FlowError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 1


def _print_preset_report(name, report):
    kind = report["kind"]
    if kind == "convergence":
        print("N,e_inf,order_inf,e_l2,order_l2")
        for row in report["rows"]:
            n, ei, oi, el, ol = row
            print(f"{n},{ei:.4g},{'-' if oi is None else f'{oi:.3g}'},"
                  f"{el:.4g},{'-' if ol is None else f'{ol:.3g}'}")
    elif kind == "cpu":
        for r in report["rows"]:
            print(f"N={r['N']} M={r['M']}: adi {r['adi_steps']} steps "
                  f"{r['adi_wall_s']:.3f}s | explicit {r['explicit_steps']} steps "
                  f"{r['explicit_wall_s']:.3f}s")
    elif kind == "adi-schwarz":
        for t, d_ab, d_ba, haus in report["rows"]:
            print(f"t={t:.6g}: adi-vs-schwarz hausdorff={haus:.3e}")
    elif kind == "stability":
        print(f"adi stable: {report['adi_stable']}; "
              f"explicit blew up: {report['explicit_exploded']}")
    elif kind == "single":
        res = report["result"]
        final = res.records[-1]
        print(f"{res.termination} at t={res.t_final:.6g}: "
              f"measure={final.length_or_area:.6g} enclosed={final.enclosed:.6g}")


if __name__ == "__main__":
    sys.exit(main())

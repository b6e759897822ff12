"""Staged orchestration: simulate -> connect -> caps -> reconstruct -> speed.

Each stage persists its outputs with a manifest recording the digests of its
inputs; a completed stage is skipped on resume when those digests still
match, and a mismatch refuses to resume.  All synthesis-side ground truth
(the speed model, eikonal boundary distances) is built from the configured
medium; the inversion stages touch only traces and derived matrices.
"""

from __future__ import annotations

import math
import os
from pathlib import Path

import numpy as np

from . import aniso, basis, boundary_ops, control, forward, medium, reconstruct, storage
from .config import PipelineConfig, save_config
from .errors import ConfigurationError, ProvenanceError

__all__ = [
    "build_medium",
    "build_basis_spec",
    "max_speed_estimate",
    "run_pipeline",
    "emit_plots",
    "run_checks",
]


# ---------------------------------------------------------------------------
# Config-driven builders
# ---------------------------------------------------------------------------

def max_speed_estimate(cfg: PipelineConfig, depth: float) -> float:
    med = cfg.medium
    if med.kind == "constant":
        return med.c
    if med.kind == "layered":
        return max(med.c0, med.c0 - med.gradient * depth, med.floor)
    if med.kind == "lens":
        return 1.0
    if med.kind == "file":
        return medium.load_speed_field(med.path).max_speed
    raise ConfigurationError(f"unknown medium kind: {med.kind}")


def build_medium(cfg: PipelineConfig, x_half: float, depth: float,
                 dx: float) -> medium.SpeedField:
    med = cfg.medium
    if med.kind == "constant":
        return medium.constant_speed(med.c, x_half, depth, dx)
    if med.kind == "layered":
        return medium.layered_speed(med.c0, med.gradient, x_half, depth, dx,
                                    floor=med.floor)
    if med.kind == "lens":
        return medium.lens_speed(x_half, depth, dx, floor=med.floor)
    if med.kind == "file":
        f = medium.load_speed_field(med.path)
        return medium.resample_field(f, dx, x_half=x_half, depth=depth)
    raise ConfigurationError(f"unknown medium kind: {med.kind}")


def simulation_domain(cfg: PipelineConfig) -> tuple[float, float]:
    """(x half-width, depth) large enough that no edge reflection re-enters
    the receiver window within the recorded interval."""
    horizon = 2 * cfg.T + cfg.t0
    depth0 = 1.3  # probe depth for the speed bound
    cmax = max_speed_estimate(cfg, depth0)
    depth = 0.5 * horizon * cmax + cfg.solver.pad
    if cfg.solver.depth is not None:
        depth = cfg.solver.depth
    x_half = cfg.lr + 0.5 * horizon * cmax + cfg.solver.pad
    if cfg.medium.kind == "constant":
        # lateral-shift synthesis reads shifted receiver windows
        x_half = max(x_half, cfg.lr + cfg.ls + cfg.solver.pad)
    dx = cfg.solver.dx
    x_half = math.ceil(x_half / dx) * dx
    depth = math.ceil(depth / dx) * dx
    return x_half, depth


def build_basis_spec(cfg: PipelineConfig) -> basis.BasisSpec:
    return basis.build_basis(cfg.t_centers(), cfg.x_centers(), a=cfg.a, T=cfg.T,
                             dt_q=cfg.dtr, dx_q=cfg.dxr,
                             gamma_margin=cfg.margin())


def _basis_manifest(cfg: PipelineConfig, spec: basis.BasisSpec) -> dict:
    return {
        "kind": "basis",
        "T": cfg.T, "t0": cfg.t0, "ls": cfg.ls, "lr": cfg.lr,
        "dts": cfg.dts, "dxs": cfg.dxs, "a": cfg.a,
        "dxr": cfg.dxr, "dtr": cfg.dtr,
        "gamma_half": spec.gamma_half,
        "n_t": spec.n_t, "n_x": spec.n_x,
        "t_first": float(spec.t_centers[0]),
        "x_first": float(spec.x_centers[0]),
    }


def _recon_grid_manifest(cfg: PipelineConfig) -> dict:
    rc = cfg.recon
    return {"kind": "recon-grid",
            "ys": [float(v) for v in rc.ys()],
            "ss": [float(v) for v in rc.ss()],
            "h": rc.h}


def boundary_distance_builder(cfg: PipelineConfig):
    """Per-center eikonal boundary-distance tables, cached per column."""
    span = cfg.ls + 1.0
    dx = cfg.solver.bdist_dx or cfg.solver.dx / 2
    depth = cfg.solver.bdist_depth or min(0.8, 0.8 * cfg.T)
    strip = build_medium(cfg, span, depth, dx)
    cache = {}

    def bdist_fn(y: float) -> control.BoundaryDistances:
        key = round(float(y), 12)
        if key not in cache:
            cache[key] = control.boundary_distances_from_field(strip, key, dx=dx)
        return cache[key]

    return bdist_fn


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def _stage_fresh(out: Path, manifest_name: str, inputs: dict, force: bool) -> bool:
    """True if the stage must run; raises on provenance mismatch."""
    mpath = out / manifest_name
    if not mpath.exists():
        return True
    manifest = storage.load_manifest(mpath)
    if force:
        return True
    try:
        storage.check_inputs(manifest, inputs)
    except ProvenanceError:
        raise
    return False


def stage_simulate(cfg: PipelineConfig, out: Path, force: bool = False,
                   progress=None) -> dict:
    out = Path(out)
    os.makedirs(out, exist_ok=True)
    cfg_digest = storage.manifest_digest(cfg.to_dict())
    tdir = out / "traces"
    if not _stage_fresh(tdir, "manifest.json", {"config": cfg_digest}, force):
        return storage.load_manifest(tdir / "manifest.json")

    spec = build_basis_spec(cfg)
    x_half, depth = simulation_domain(cfg)
    field = build_medium(cfg, x_half, depth, cfg.solver.dx)
    grid = forward.make_sim_grid(field, -cfg.t0, 2 * cfg.T,
                                 cfl_limit=cfg.solver.cfl, dt_align=cfg.dtr)
    rec = forward.ReceiverSpec(-cfg.lr, cfg.lr, cfg.dxr, cfg.dtr, 2 * cfg.T)
    traces = forward.record_ndmap(field, spec, grid, rec,
                                  workers=cfg.threads, progress=progress)
    manifest = storage.save_traceset(
        tdir, traces, extra_meta={"inputs": {"config": cfg_digest},
                                  "basis": _basis_manifest(cfg, spec)})
    save_config(out / "config.toml", cfg)
    storage.save_manifest(out / "basis.json", _basis_manifest(cfg, spec))
    storage.save_manifest(out / "recon-grid.json", _recon_grid_manifest(cfg))
    return manifest


def stage_connect(cfg: PipelineConfig, out: Path, force: bool = False) -> dict:
    out = Path(out)
    traces = storage.load_traceset(out / "traces")
    inputs = {"traces": traces.provenance}
    if not _stage_fresh(out, "K.bin.json", inputs, force):
        return storage.load_manifest(out / "K.bin.json")
    spec = build_basis_spec(cfg)
    G = basis.gram(spec)
    K = boundary_ops.assemble_K(traces, spec, G,
                                correction=cfg.solver.correction,
                                provenance=traces.provenance)
    storage.save_matrix(out / "G.bin", G.dense(), {"kind": "gram"})
    return storage.save_matrix(
        out / "K.bin", K.matrix,
        {"kind": "connecting", "sym_defect": K.sym_defect, "inputs": inputs})


def _load_K(out: Path) -> boundary_ops.ConnectingMatrix:
    man = storage.load_manifest(out / "K.bin.json")
    return boundary_ops.ConnectingMatrix(
        matrix=storage.load_matrix(out / "K.bin"),
        provenance=man["inputs"]["traces"],
        sym_defect=man.get("sym_defect", float("nan")))


def stage_caps(cfg: PipelineConfig, out: Path, force: bool = False,
               progress=None) -> dict:
    out = Path(out)
    kman = storage.load_manifest(out / "K.bin.json")
    inputs = {"K": kman["sha256"]}
    cdir = out / "caps"
    if not _stage_fresh(cdir, "manifest.json", inputs, force):
        return storage.load_manifest(cdir / "manifest.json")
    os.makedirs(cdir, exist_ok=True)
    spec = build_basis_spec(cfg)
    K = _load_K(out)
    bvec = basis.b_moment_vector(spec)
    bdist_fn = boundary_distance_builder(cfg)
    rc = cfg.recon
    alpha = rc.alpha if rc.alpha is not None else rc.alpha_scale * np.trace(K.matrix) / K.size
    ys, ss = rc.ys(), rc.ss()
    psis = np.zeros((ys.size * ss.size, spec.size))
    vols = np.full(ys.size * ss.size, np.nan)
    flags = np.ones(ys.size * ss.size, dtype=bool)
    p = 0
    for i, y in enumerate(ys):
        bdist = bdist_fn(float(y))
        for s in ss:
            cs = control.cap_source(K, spec,
                                    control.CapSpec(float(y), float(s), rc.h, alpha),
                                    bdist, bvec)
            psis[p] = cs.psi
            vols[p] = cs.volume
            flags[p] = abs(cs.volume) < 1e-14
            p += 1
        if progress:
            progress(i + 1, ys.size)
    storage.save_matrix(cdir / "psi.bin", psis, {"kind": "cap-sources"})
    storage.save_matrix(cdir / "volumes.bin", vols.reshape(ys.size, ss.size),
                        {"kind": "cap-volumes"})
    manifest = {
        "kind": "caps", "inputs": inputs, "alpha": float(alpha), "h": rc.h,
        "ys": [float(v) for v in ys], "ss": [float(v) for v in ss],
        "flags": [int(v) for v in flags],
    }
    storage.save_manifest(cdir / "manifest.json", manifest)
    return manifest


def stage_reconstruct(cfg: PipelineConfig, out: Path, force: bool = False) -> dict:
    out = Path(out)
    cman = storage.load_manifest(out / "caps" / "manifest.json")
    traces = storage.load_traceset(out / "traces")
    inputs = {"caps": storage.manifest_digest(cman), "traces": traces.provenance}
    if not _stage_fresh(out, "recon-points.json", inputs, force):
        return storage.load_manifest(out / "recon-points.json")
    spec = build_basis_spec(cfg)
    K = _load_K(out)
    bv = reconstruct.build_b_vectors(traces, spec, ["1", "x1", "x2"])
    psis = storage.load_matrix(out / "caps" / "psi.bin")
    ys = np.array(cman["ys"])
    ss = np.array(cman["ss"])
    vols = storage.load_matrix(out / "caps" / "volumes.bin")
    pts = np.full((ys.size, ss.size, 2), np.nan)
    flags = np.array(cman["flags"], dtype=bool).reshape(ys.size, ss.size)
    denom = psis @ bv["1"]
    num1 = psis @ bv["x1"]
    num2 = psis @ bv["x2"]
    for p in range(psis.shape[0]):
        i, j = divmod(p, ss.size)
        if flags[i, j] or abs(denom[p]) < 1e-14:
            flags[i, j] = True
            continue
        pts[i, j, 0] = num1[p] / denom[p]
        pts[i, j, 1] = num2[p] / denom[p]
    samples = reconstruct.TransformSamples(ys=ys, ss=ss, h=cman["h"], points=pts,
                                           volumes=vols, flags=flags)
    samples.to_csv(out / "recon-points.csv")
    storage.save_matrix(out / "points.bin", np.nan_to_num(pts),
                        {"kind": "transform-points"})
    manifest = {"kind": "recon-points", "inputs": inputs,
                "csv": "recon-points.csv",
                "monotone_depth_fraction": samples.monotone_depth_fraction()}
    storage.save_manifest(out / "recon-points.json", manifest)
    return manifest


def stage_speed(cfg: PipelineConfig, out: Path, force: bool = False) -> dict:
    out = Path(out)
    pman = storage.load_manifest(out / "recon-points.json")
    inputs = {"recon-points": storage.manifest_digest(pman)}
    if not _stage_fresh(out, "recon.json", inputs, force):
        return storage.load_manifest(out / "recon.json")
    samples = _load_samples(cfg, out)
    samples = reconstruct.speed_from_transform(samples, lam=cfg.recon.spline_lam)
    samples.to_csv(out / "recon.csv")
    manifest = {"kind": "recon", "inputs": inputs, "csv": "recon.csv",
                "skipped_columns": samples.diagnostics.get("spline_skipped_columns", [])}
    storage.save_manifest(out / "recon.json", manifest)
    return manifest


def _load_samples(cfg: PipelineConfig, out: Path) -> reconstruct.TransformSamples:
    cman = storage.load_manifest(out / "caps" / "manifest.json")
    ys = np.array(cman["ys"]); ss = np.array(cman["ss"])
    pts = storage.load_matrix(out / "points.bin")
    vols = storage.load_matrix(out / "caps" / "volumes.bin")
    flags = np.array(cman["flags"], dtype=bool).reshape(ys.size, ss.size)
    pts = pts.reshape(ys.size, ss.size, 2)
    pts[flags] = np.nan
    return reconstruct.TransformSamples(ys=ys, ss=ss, h=cman["h"], points=pts,
                                        volumes=vols, flags=flags)


_STAGES = ["simulate", "connect", "caps", "reconstruct", "speed"]


def run_pipeline(cfg: PipelineConfig, out, force: bool = False,
                 progress=None, stages=None) -> Path:
    """Run (or resume) the staged pipeline into an artifact directory."""
    cfg.validate()
    out = Path(out)
    os.makedirs(out, exist_ok=True)
    todo = stages or _STAGES
    runners = {
        "simulate": lambda: stage_simulate(cfg, out, force, progress=progress),
        "connect": lambda: stage_connect(cfg, out, force),
        "caps": lambda: stage_caps(cfg, out, force, progress=progress),
        "reconstruct": lambda: stage_reconstruct(cfg, out, force),
        "speed": lambda: stage_speed(cfg, out, force),
    }
    for name in todo:
        if name not in runners:
            raise ConfigurationError(f"unknown stage: {name}")
        runners[name]()
    return out


# ---------------------------------------------------------------------------
# Plot-data emission
# ---------------------------------------------------------------------------

def emit_plots(cfg: PipelineConfig, out) -> Path:
    """Write the four plot-data bundles for a completed run: the speed model
    with its semi-geodesic grid, estimated vs reference coordinates, the
    reconstruction comparison, and per-column speed slices."""
    out = Path(out)
    if not (out / "recon.json").exists():
        raise ConfigurationError(
            f"nothing to plot in {out}: run the pipeline stages first")
    pdir = out / "plots"
    samples = _load_samples(cfg, out)
    samples = reconstruct.speed_from_transform(samples, lam=cfg.recon.spline_lam)

    # ground truth for reference curves
    span = cfg.ls + 1.0
    truth = build_medium(cfg, span, 1.2, cfg.solver.dx / 2)
    ys, ss, h = samples.ys, samples.ss, samples.h

    d = pdir / "model"
    os.makedirs(d, exist_ok=True)
    medium.speed_field_to_csv(d / "speed_field.csv", truth)
    ref = medium.semi_geodesic_grid(truth, ys, ss)
    with open(d / "semi_geodesic_grid.csv", "w") as fh:
        fh.write("y,s,x,z\n")
        for i, y in enumerate(ys):
            for j, s in enumerate(ss):
                fh.write(f"{y:.10g},{s:.10g},{ref[i, j, 0]:.10g},{ref[i, j, 1]:.10g}\n")

    d = pdir / "coords"
    os.makedirs(d, exist_ok=True)
    ref_h = medium.semi_geodesic_grid(truth, ys, ss + h / 2)
    with open(d / "estimated_vs_reference.csv", "w") as fh:
        fh.write("y,s,phi1,phi2,ref_x,ref_z,flag\n")
        for i, y in enumerate(ys):
            for j, s in enumerate(ss):
                fh.write(f"{y:.10g},{s:.10g},{samples.points[i, j, 0]:.10g},"
                         f"{samples.points[i, j, 1]:.10g},{ref_h[i, j, 0]:.10g},"
                         f"{ref_h[i, j, 1]:.10g},{int(samples.flags[i, j])}\n")

    d = pdir / "reconstruction"
    os.makedirs(d, exist_ok=True)
    with open(d / "speed_at_estimated_points.csv", "w") as fh:
        fh.write("y,s,x,z,c_est,c_true\n")
        for i, y in enumerate(ys):
            for j, s in enumerate(ss):
                px, pz = samples.points[i, j]
                if np.isnan(px):
                    continue
                c_true = medium.eval_speed_clamped(truth, (px, pz))
                fh.write(f"{y:.10g},{s:.10g},{px:.10g},{pz:.10g},"
                         f"{samples.speeds[i, j]:.10g},{c_true:.10g}\n")

    d = pdir / "slices"
    os.makedirs(d, exist_ok=True)
    picks = [0, ys.size // 2, ys.size - 1]
    for i in picks:
        with open(d / f"slice_y{ys[i]:+.3f}.csv".replace("+", "p").replace("-", "m"),
                  "w") as fh:
            fh.write("s,depth,c_est,c_true\n")
            for j, s in enumerate(ss):
                px, pz = samples.points[i, j]
                if np.isnan(px):
                    continue
                c_true = medium.eval_speed_clamped(truth, (px, pz))
                fh.write(f"{s:.10g},{pz:.10g},{samples.speeds[i, j]:.10g},"
                         f"{c_true:.10g}\n")
    return pdir


# ---------------------------------------------------------------------------
# Oracle self-checks (the `check` subcommand)
# ---------------------------------------------------------------------------

def run_checks(verbose=print) -> bool:
    """Quick oracle suite: eikonal closed forms, solver energy/linearity,
    operator closed forms, and the connecting-operator identity on a small
    constant-speed basis.  Returns True when everything passes."""
    ok = True

    def report(name, passed, detail=""):
        nonlocal ok
        ok = ok and passed
        verbose(f"[{'PASS' if passed else 'FAIL'}] {name}" + (f": {detail}" if detail else ""))

    f = medium.constant_speed(1.0, 1.0, 1.0, 0.02)
    d = medium.eikonal_distance(f, ("point", (0.0, -0.5)))
    X, Z = np.meshgrid(f.xs, f.zs, indexing="ij")
    err = np.abs(d.values - np.hypot(X, Z + 0.5)).max()
    report("eikonal distance, constant speed", err < 2.5 * 0.02, f"max err {err:.3g}")

    spec = basis.build_basis([0.3], [0.0], a=345.4, T=1.0, dt_q=0.01, dx_q=0.02,
                             gamma_margin=0.2)
    grid = forward.make_sim_grid(f, -0.1, 1.5, dt_align=0.01)
    res = forward.simulate(f, forward.basis_source(spec, 0), grid, track_energy=True)
    E = res["energy"]
    k0 = int(0.7 / grid.dt)
    drift = np.abs(E[k0:] - E[k0]).max() / abs(E[k0])
    report("solver energy conservation", drift < 1e-10, f"drift {drift:.3g}")

    series = np.sin(0.5 * np.pi * np.arange(0, 2.0 + 1e-12, 0.01))
    J = boundary_ops.apply_J(series, 0.01)
    ts = np.arange(0, 1.0 + 1e-12, 0.01)
    err = np.abs(J - 4 * np.cos(0.5 * np.pi * ts) / np.pi).max()
    report("J operator closed form", err < 1e-3, f"max err {err:.3g}")

    fc = medium.constant_speed(1.0, 2.9167, 1.1667, 1 / 24)
    tc = 0.3 + 0.1 * np.arange(5)
    xc = -0.4 + 0.1 * np.arange(9)
    spec = basis.build_basis(tc, xc, a=86.35, T=1.0, dt_q=0.01, dx_q=0.05,
                             gamma_margin=0.45)
    G = basis.gram(spec)
    grid = forward.make_sim_grid(fc, -0.1, 2.0, dt_align=0.01)
    rec = forward.ReceiverSpec(-1.85, 1.85, 0.05, 0.01, 2.0)
    traces = forward.record_ndmap(fc, spec, grid, rec)
    K = boundary_ops.assemble_K(traces, spec, G)
    states = forward.final_states_for_basis(fc, spec, grid, 1.0)
    Ko = forward.interior_gram(fc, states)
    rel = np.linalg.norm(K.matrix - Ko) / np.linalg.norm(Ko)
    report("connecting operator vs interior oracle", rel < 2e-2, f"rel err {rel:.3g}")
    return ok

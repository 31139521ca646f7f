"""Experiment harness: initial-condition builders, single and coupled runs
driven by a RunConfig, and the (eps, alpha_sigma) sweep with CSV/JSON output.

Sweep outputs under the chosen directory:
    sweep.csv    one row per eps cell, fixed column order, no timestamps,
                 byte-identical across reruns of the same config
    sweep.json   the same numbers plus the full config, content hash,
                 fit details and a creation timestamp
    cells/<eps>_<seed>.json   per-path errors for one cell

A finished sweep is not recomputed: when sweep.json exists and its stored
config hash matches, run_sweep returns the stored report untouched.
Individual cell files are reused the same way, so an interrupted sweep
resumes from the last finished cell.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from datetime import datetime, timezone

import numpy as np

from .config import (RunConfig, SweepConfig, config_hash, serialize_config,
                     validate_run_config, validate_sweep_config)
from .diagnostics import compute_E0, compute_E1, fit_rate, moment_path_value
from .dynamics import ModelVariant, PhysicalConstants, PreparedModel, State
from .grid import Grid
from .integrator import StepperConfig, integrate_ensemble
from .noise import BrownianDriver, ModeSpec, NoiseModel, make_mode_bank, scale_noise_map
from .projectors import KernelK, project_P

# distinct Brownian seed per path; prime stride so nearby base seeds
# cannot collide inside one sweep
PATH_SEED_STRIDE = 1000003

CSV_COLUMNS = ("eps", "alpha_sigma", "gamma", "model_a", "model_b", "n_paths",
               "E0_mean", "E0_se", "E1_mean", "E1_se", "blowup_frac",
               "slope", "slope_ci")


def worker_count(override=None) -> int:
    """Resolve the worker count: explicit argument, then THINFLOW_WORKERS,
    then 1."""
    if override is not None:
        n = int(override)
    else:
        n = int(os.environ.get("THINFLOW_WORKERS", "1"))
    if n < 1:
        raise ValueError("worker count must be at least 1")
    return n


# ------------------------------------------------------- initial conditions

def taylor_green_like(grid: Grid, amplitude: float,
                      theta_amplitude: float) -> State:
    """Cellular vortex initial state with a baroclinic overturning component
    (so the diagnosed vertical velocity is nonzero) and a tracer anomaly."""
    X, Y, Z = grid.meshgrid()
    vert = np.cos(np.pi * (Z + 1.0))
    v1 = amplitude * (np.sin(X) * np.cos(Y) + 0.5 * np.sin(X) * vert)
    v2 = amplitude * (-np.cos(X) * np.sin(Y) + 0.5 * np.sin(Y) * vert)
    th = theta_amplitude * np.sin(X + Y) * vert
    v = grid.to_spectral(np.stack([v1, v2]))
    theta = grid.to_spectral(th)
    return State(grid, project_P(grid, grid.dealias(v)), grid.dealias(theta))


def random_smooth(grid: Grid, amplitude: float, theta_amplitude: float,
                  spectrum_slope: float, seed: int) -> State:
    """Seeded random field with |k|^(-slope) spectral decay, projected onto
    the admissible space.  Same seed, same field, on any call order."""
    rng = np.random.default_rng(seed)
    kk = np.sqrt(grid.k2)
    # the k = 0 branch is masked out but still evaluated, keep it quiet
    with np.errstate(over="ignore"):
        decay = np.where(kk > 0, np.maximum(kk, 1e-300) ** (-spectrum_slope), 0.0)
    shape = (3,) + grid.kshape
    coeff = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    coeff *= decay
    fields = grid.to_physical(coeff.astype(np.complex128))
    # normalize each component to the requested pointwise scale
    peak = max(float(np.max(np.abs(fields))), 1e-300)
    fields *= 1.0 / peak
    v = grid.to_spectral(amplitude * fields[:2])
    theta = grid.to_spectral(theta_amplitude * fields[2])
    return State(grid, project_P(grid, grid.dealias(v)), grid.dealias(theta))


def load_initial_file(grid: Grid, path: str) -> State:
    """Initial state from an .npz holding physical-space arrays
    v (2, nx, ny, nz) and theta (nx, ny, nz)."""
    with np.load(path) as data:
        if "v" not in data or "theta" not in data:
            raise ValueError(f"{path}: need arrays 'v' and 'theta'")
        v_phys = np.asarray(data["v"], float)
        th_phys = np.asarray(data["theta"], float)
    if v_phys.shape != (2, grid.nx, grid.ny, grid.nz):
        raise ValueError(f"{path}: v has shape {v_phys.shape}, grid wants "
                         f"(2, {grid.nx}, {grid.ny}, {grid.nz})")
    if th_phys.shape != (grid.nx, grid.ny, grid.nz):
        raise ValueError(f"{path}: theta has shape {th_phys.shape}")
    v = grid.to_spectral(v_phys)
    theta = grid.to_spectral(th_phys)
    return State(grid, project_P(grid, grid.dealias(v)), grid.dealias(theta))


def build_initial(grid: Grid, cfg: RunConfig) -> State:
    ic = cfg.initial_condition
    if ic.kind == "taylor_green_like":
        return taylor_green_like(grid, ic.amplitude, ic.theta_amplitude)
    if ic.kind == "random_smooth":
        return random_smooth(grid, ic.amplitude, ic.theta_amplitude,
                             ic.spectrum_slope, ic.ic_seed)
    return load_initial_file(grid, ic.path)


# ------------------------------------------------------------ construction

def build_grid(cfg: RunConfig) -> Grid:
    return Grid(cfg.grid.nx, cfg.grid.ny, cfg.grid.nz)


def _carries_vertical_noise(variant: str) -> bool:
    """Non-hydrostatic lanes keep the vertical noise residual; hydrostatic
    lanes are built on planar banks."""
    return not variant.startswith("pe")


def build_noise(grid: Grid, cfg: RunConfig, eps: float, alpha_sigma: float,
                vertical: bool = False) -> NoiseModel:
    """Descriptor bank from the config (explicit modes win over the
    generated bank), rescaled to the cell's aspect ratio.

    With noise.vertical_coupling > 0 the bank is doubled: each mode gets a
    companion channel holding only a z-independent vertical component
    amp_z = coupling * eps * amplitude (exactly divergence-free, vanishing
    with eps).  The companions carry their own Brownian channels, so the
    vertical residual is independent of the planar transport.  On lanes
    with vertical=False the companions are zero fields; they are kept so
    every lane of a coupled pair consumes the same increment layout.  The
    vertical-row scaling alpha_sigma is applied by the dynamics, not baked
    into the bank.
    """
    n = cfg.noise
    if n.modes:
        bank = [ModeSpec(kx=m.kx, ky=m.ky, amplitude=m.amplitude,
                         phase=m.phase, zmult=m.zmult, z_phase=m.z_phase,
                         amp_z=m.amp_z) for m in n.modes]
    else:
        bank = make_mode_bank(n.mode_count, seed=n.bank_seed,
                              max_wave=n.max_wave, amplitude=n.amplitude)
    base = NoiseModel.from_modes(grid, bank, upsilon=n.upsilon,
                                 alpha_sigma=alpha_sigma)
    scaled = scale_noise_map(base, eps)
    lift = n.vertical_coupling * eps
    if lift == 0.0:
        return scaled
    companions = [replace(m, amplitude=0.0, zmult=0.0, z_phase=0.0,
                          amp_z=(lift * m.amplitude if vertical else 0.0))
                  for m in scaled.modes]
    return NoiseModel.from_modes(grid, tuple(scaled.modes) + tuple(companions),
                                 upsilon=n.upsilon, alpha_sigma=alpha_sigma)


def build_constants(cfg: RunConfig) -> PhysicalConstants:
    return PhysicalConstants(rho0=cfg.physics.rho0, g=cfg.physics.g,
                             upsilon=cfg.noise.upsilon)


def build_stepper(cfg: RunConfig) -> StepperConfig:
    s = cfg.stepper
    return StepperConfig(dt=s.dt, t_end=s.t_end, record_stride=s.record_stride,
                         blowup_threshold=s.blowup_threshold)


def prepare(cfg: RunConfig, grid=None, noise=None):
    """(grid, model, stepper, initial) for a single-model config."""
    validate_run_config(cfg)
    g = grid if grid is not None else build_grid(cfg)
    m = cfg.model
    if noise is None:
        noise = build_noise(g, cfg, m.eps, m.alpha_sigma,
                            vertical=_carries_vertical_noise(m.variant))
    variant = ModelVariant(m.variant, m.eps, m.alpha_sigma,
                           KernelK(m.kernel.kind, m.kernel.cutoff))
    model = PreparedModel(g, variant, noise, build_constants(cfg))
    return g, model, build_stepper(cfg), build_initial(g, cfg)


def run_single(cfg: RunConfig):
    """One model, one path.  The Brownian seed is cfg.seed."""
    g, model, stepper, initial = prepare(cfg)
    driver = BrownianDriver(cfg.seed, stepper.dt, model.n_modes)
    return integrate_ensemble(initial, [model], stepper, driver).runs[0]


def _paired_variants(model_a, model_b, eps: float, alpha_sigma: float):
    va = ModelVariant(model_a.variant, eps, alpha_sigma,
                      KernelK(model_a.kernel.kind, model_a.kernel.cutoff))
    vb = ModelVariant(model_b.variant, eps, alpha_sigma,
                      KernelK(model_b.kernel.kind, model_b.kernel.cutoff))
    return va, vb


def _lane_noise(grid: Grid, cfg: RunConfig, variant: ModelVariant) -> NoiseModel:
    return build_noise(grid, cfg, variant.eps, variant.alpha_sigma,
                       vertical=_carries_vertical_noise(variant.tag))


def run_coupled(cfg: SweepConfig, eps=None, alpha_sigma=None, seed=None):
    """The sweep's model pair on one shared path at a single eps (defaults:
    the base config's eps and seed, alpha from the sweep rule)."""
    validate_sweep_config(cfg)
    base = cfg.base
    eps = base.model.eps if eps is None else float(eps)
    alpha = cfg.alpha_for(eps) if alpha_sigma is None else float(alpha_sigma)
    seed = base.seed if seed is None else int(seed)
    g = build_grid(base)
    va, vb = _paired_variants(cfg.model_a, cfg.model_b, eps, alpha)
    constants = build_constants(base)
    models = [PreparedModel(g, v, _lane_noise(g, base, v), constants)
              for v in (va, vb)]
    stepper = build_stepper(base)
    initial = build_initial(g, base)
    driver = BrownianDriver(seed, stepper.dt, models[0].n_modes)
    return integrate_ensemble(initial, models, stepper, driver)


# ------------------------------------------------------------------- sweep

def _path_rows_to_stats(rows):
    """Aggregate per-path rows into cell means; blown paths are excluded
    from the error means but counted in the blow-up fraction."""
    ok = [r for r in rows if not r["blew_up"]]
    n = len(rows)
    out = {"n_paths": n, "n_ok": len(ok),
           "blowup_frac": (n - len(ok)) / n if n else 0.0}
    for key in ("E0", "E1"):
        vals = np.array([r[key] for r in ok], float) if ok else np.array([])
        if vals.size:
            out[f"{key}_mean"] = float(vals.mean())
            out[f"{key}_se"] = (float(vals.std(ddof=1) / np.sqrt(vals.size))
                                if vals.size > 1 else 0.0)
        else:
            out[f"{key}_mean"] = float("nan")
            out[f"{key}_se"] = float("nan")
    mom = np.array([r["moment"] for r in ok], float) if ok else np.array([])
    sup4 = np.array([r["sup4"] for r in ok], float) if ok else np.array([])
    out["moment_mean"] = float(mom.mean()) if mom.size else float("nan")
    out["sup4_mean"] = float(sup4.mean()) if sup4.size else float("nan")
    return out


def run_cell(cfg: SweepConfig, eps: float) -> dict:
    """All paths of one (eps, alpha) cell: coupled runs on shared Brownian
    paths, one row of error functionals per path."""
    base = cfg.base
    alpha = cfg.alpha_for(eps)
    g = build_grid(base)
    va, vb = _paired_variants(cfg.model_a, cfg.model_b, eps, alpha)
    constants = build_constants(base)
    models = [PreparedModel(g, v, _lane_noise(g, base, v), constants)
              for v in (va, vb)]
    stepper = build_stepper(base)
    initial = build_initial(g, base)
    rows = []
    for p in range(cfg.paths_per_cell):
        dseed = base.seed + PATH_SEED_STRIDE * p
        driver = BrownianDriver(dseed, stepper.dt, models[0].n_modes)
        out = integrate_ensemble(initial, models, stepper, driver)
        ra, rb = out.runs
        diff = out.diffs[0]
        blew = ra.blew_up or rb.blew_up
        btimes = [t for t in (ra.blowup_time, rb.blowup_time) if t is not None]
        e0 = compute_E0(diff)
        e1 = compute_E1(diff, blew_up=blew,
                        blowup_time=min(btimes) if btimes else None)
        rows.append({
            "path": p, "driver_seed": dseed,
            "E0": e0, "E1": None if np.isinf(e1) else e1,
            "blew_up": bool(blew),
            "blowup_time": min(btimes) if btimes else None,
            "moment": moment_path_value(ra, eps),
            "sup4": float(np.max(np.asarray(ra.series["u_Leps"]) ** 2)),
        })
    cell = {"eps": float(eps), "alpha_sigma": float(alpha), "paths": rows}
    cell.update(_path_rows_to_stats(
        [dict(r, E1=np.inf if r["E1"] is None else r["E1"]) for r in rows]))
    return cell


def _cell_job(payload):
    cfg_text, eps = payload
    from .config import parse_config
    return run_cell(parse_config(cfg_text), eps)


def _cell_filename(eps: float, seed: int) -> str:
    return f"{eps:g}_{seed}.json"


def _fit_or_none(points):
    usable = [(e, v) for e, v in points
              if np.isfinite(v) and v > 0.0 and e > 0.0]
    if len(usable) < 3:
        return None
    try:
        fit = fit_rate(usable)
    except ValueError:
        return None
    return fit


def build_report(cfg: SweepConfig, cells: list) -> dict:
    """Assemble the sweep-level report: per-cell stats plus fitted decay
    rates of the mean errors against eps."""
    fits = {}
    for key in ("E0", "E1"):
        fit = _fit_or_none([(c["eps"], c[f"{key}_mean"]) for c in cells])
        fits[key] = None if fit is None else {
            "slope": fit.slope, "intercept": fit.intercept,
            "r2": fit.r2, "ci95": fit.ci95}
    gamma = (cfg.alpha_rule.gamma if cfg.alpha_rule.kind == "power" else None)
    return {
        "kind": "sweep",
        "config_hash": config_hash(cfg),
        "model_a": cfg.model_a.variant,
        "model_b": cfg.model_b.variant,
        "alpha_rule": asdict(cfg.alpha_rule),
        "gamma": gamma,
        "cells": cells,
        "fit_E0": fits["E0"],
        "fit_E1": fits["E1"],
        "slope_undefined": fits["E0"] is None,
        "config": asdict(cfg),
    }


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.10g}"


def report_to_csv(report: dict) -> str:
    """Fixed-column CSV, one row per cell.  Deterministic bytes: no
    timestamps, stable float formatting, trailing newline."""
    lines = [",".join(CSV_COLUMNS)]
    fit = report.get("fit_E0")
    slope = None if fit is None else fit["slope"]
    slope_ci = None if fit is None else fit["ci95"]
    for c in report.get("cells", []):
        row = {
            "eps": c["eps"], "alpha_sigma": c["alpha_sigma"],
            "gamma": report.get("gamma"),
            "model_a": report["model_a"], "model_b": report["model_b"],
            "n_paths": c["n_paths"],
            "E0_mean": c["E0_mean"], "E0_se": c["E0_se"],
            "E1_mean": c["E1_mean"], "E1_se": c["E1_se"],
            "blowup_frac": c["blowup_frac"],
            "slope": slope, "slope_ci": slope_ci,
        }
        lines.append(",".join(_fmt(row[k]) for k in CSV_COLUMNS))
    return "\n".join(lines) + "\n"


def emit_report(report: dict, out_dir: str) -> None:
    """Write sweep.csv (timestamp-free) and sweep.json (with timestamp and
    full config) under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "sweep.csv"), "w", encoding="utf-8") as fh:
        fh.write(report_to_csv(report))
    payload = dict(report)
    payload["created_utc"] = datetime.now(timezone.utc).isoformat()
    with open(os.path.join(out_dir, "sweep.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, default=float)
        fh.write("\n")


def _load_if_current(path: str, want_hash: str):
    if not os.path.exists(path):
        return None
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError):
        return None
    if data.get("config_hash") != want_hash:
        return None
    return data


def run_sweep(cfg: SweepConfig, out_dir: str = None, workers=None) -> dict:
    """Full (eps, alpha) sweep of the configured model pair.

    With out_dir set, results are written as they finish and a completed
    sweep with a matching config hash is returned as-is without
    recomputation.  A cell that fails outright is recorded with an
    "error" entry and the sweep moves on.
    """
    validate_sweep_config(cfg)
    want = config_hash(cfg)
    if out_dir is not None:
        stored = _load_if_current(os.path.join(out_dir, "sweep.json"), want)
        if stored is not None:
            stored["resumed"] = True
            return stored
        os.makedirs(os.path.join(out_dir, "cells"), exist_ok=True)

    cells = [None] * len(cfg.eps_list)
    pending = []
    for i, eps in enumerate(cfg.eps_list):
        if out_dir is not None:
            cpath = os.path.join(out_dir, "cells",
                                 _cell_filename(eps, cfg.base.seed))
            prior = _load_if_current(cpath, want)
            if prior is not None:
                cells[i] = prior["cell"]
                continue
        pending.append((i, eps))

    nworkers = worker_count(workers)
    if nworkers > 1 and len(pending) > 1:
        text = serialize_config(cfg)
        with ProcessPoolExecutor(max_workers=nworkers) as pool:
            done = list(pool.map(_cell_job, [(text, eps) for _, eps in pending]))
        results = dict(zip((i for i, _ in pending), done))
    else:
        results = {}
        for i, eps in pending:
            try:
                results[i] = run_cell(cfg, eps)
            except Exception as exc:  # noqa: BLE001 - cell failures must not kill the sweep
                results[i] = {"eps": float(eps),
                              "alpha_sigma": float(cfg.alpha_for(eps)),
                              "error": f"{type(exc).__name__}: {exc}",
                              "paths": [], "n_paths": 0, "n_ok": 0,
                              "blowup_frac": float("nan"),
                              "E0_mean": float("nan"), "E0_se": float("nan"),
                              "E1_mean": float("nan"), "E1_se": float("nan"),
                              "moment_mean": float("nan"),
                              "sup4_mean": float("nan")}

    for i, eps in pending:
        cells[i] = results[i]
        if out_dir is not None:
            cpath = os.path.join(out_dir, "cells",
                                 _cell_filename(eps, cfg.base.seed))
            with open(cpath, "w", encoding="utf-8") as fh:
                json.dump({"config_hash": want, "cell": cells[i]}, fh,
                          indent=1, default=float)
                fh.write("\n")

    report = build_report(cfg, cells)
    if out_dir is not None:
        emit_report(report, out_dir)
    return report

"""Command-line front end.

Subcommands:
    run     one model on one Brownian path, writes <out>/run.json
    couple  the configured model pair on one shared path, writes <out>/couple.json
    sweep   full (eps, alpha) convergence study, writes <out>/sweep.csv,
            <out>/sweep.json and per-cell files under <out>/cells/
    check   fast invariant self-checks, one PASS/FAIL line each
    rates   refit error-decay slopes from an existing <out>/sweep.csv

Shared flags: --config (TOML file, defaults apply when omitted), --out
(output directory, default "."), --seed (overrides the config seed).
--paths belongs to sweep only and overrides paths_per_cell.  Sweep cell
parallelism is capped by the THINFLOW_WORKERS environment variable.

The checks run on a coarse grid so the command stays interactive; the
full-size versions of the same properties live in the test suite.
"""

import argparse
import csv
import json
import os
import sys
from dataclasses import asdict, replace
from datetime import datetime, timezone

import numpy as np

from .config import (
    RunConfig,
    SweepConfig,
    ConfigError,
    config_hash,
    load_config,
    validate_run_config,
)
from .diagnostics import compute_E0, compute_E1, energy_residual, fit_rate
from .dynamics import ModelVariant, PreparedModel, State, vertical_velocity
from .grid import Grid
from .harness import run_coupled, run_single, run_sweep
from .integrator import BrownianDriver, StepperConfig, integrate_ensemble
from .noise import NoiseModel, make_mode_bank
from .projectors import (
    KernelK,
    project_A,
    project_P,
    project_Peps,
    project_R,
)


def _fail(msg: str) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return 2


def _load(path):
    """Parsed config from file, or None when no file was given."""
    if path is None:
        return None
    return load_config(path)


def _as_run(cfg) -> RunConfig:
    if cfg is None:
        return RunConfig()
    if isinstance(cfg, SweepConfig):
        return cfg.base
    return cfg


def _as_sweep(cfg) -> SweepConfig:
    if cfg is None:
        return SweepConfig()
    if isinstance(cfg, RunConfig):
        raise ConfigError("this command needs sweep settings ([sweep] table "
                          "with eps_list / model pair); got a run-only config")
    return cfg


def _with_seed(cfg, seed):
    if seed is None:
        return cfg
    if isinstance(cfg, SweepConfig):
        return replace(cfg, base=replace(cfg.base, seed=int(seed)))
    return replace(cfg, seed=int(seed))


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


def _write_json(path: str, payload: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=1, default=float)
        fh.write("\n")


def _run_summary(run) -> dict:
    return {
        "variant": run.variant_tag,
        "eps": run.eps,
        "seed": run.seed,
        "dt": run.dt,
        "n_steps": run.n_steps,
        "blew_up": run.blew_up,
        "blowup_time": run.blowup_time,
    }


# ----------------------------------------------------------------- run

def cmd_run(args) -> int:
    cfg = _with_seed(_as_run(_load(args.config)), args.seed)
    cfg = validate_run_config(cfg)
    run = run_single(cfg)
    resid = energy_residual(run) if not run.blew_up else float("nan")
    payload = {
        "kind": "run",
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "config_hash": config_hash(cfg),
        "config": asdict(cfg),
        "alpha_sigma": cfg.model.alpha_sigma,
        "energy_residual": resid,
        "times": run.times,
        "series": run.series,
        "ledger": run.ledger,
    }
    payload.update(_run_summary(run))
    path = os.path.join(args.out, "run.json")
    _write_json(path, payload)
    tail = (f"blew up at t={run.blowup_time:.4g}" if run.blew_up
            else f"energy residual {resid:.3e}")
    print(f"run: {run.variant_tag} eps={run.eps:g} seed={run.seed} "
          f"steps={run.n_steps} {tail} -> {path}")
    return 0


# -------------------------------------------------------------- couple

def cmd_couple(args) -> int:
    cfg = _load(args.config)
    if cfg is None or isinstance(cfg, RunConfig):
        # a run config pairs its model against the default partner
        cfg = SweepConfig(base=_as_run(cfg))
    cfg = _with_seed(cfg, args.seed)
    out = run_coupled(cfg)
    ra, rb = out.runs
    diff = out.diffs[0]
    blew = ra.blew_up or rb.blew_up
    btimes = [t for t in (ra.blowup_time, rb.blowup_time) if t is not None]
    e0 = compute_E0(diff)
    e1 = compute_E1(diff, blew_up=blew,
                    blowup_time=min(btimes) if btimes else None)
    payload = {
        "kind": "couple",
        "created_utc": datetime.now(timezone.utc).isoformat(),
        "config_hash": config_hash(cfg),
        "model_a": cfg.model_a.variant,
        "model_b": cfg.model_b.variant,
        "eps": ra.eps,
        "alpha_sigma": cfg.alpha_for(ra.eps),
        "seed": ra.seed,
        "E0": e0,
        "E1": None if np.isinf(e1) else e1,
        "runs": [_run_summary(r) for r in out.runs],
        "diff": diff,
    }
    path = os.path.join(args.out, "couple.json")
    _write_json(path, payload)
    e1_txt = "inf" if np.isinf(e1) else f"{e1:.6e}"
    print(f"couple: {cfg.model_a.variant} vs {cfg.model_b.variant} "
          f"eps={ra.eps:g} seed={ra.seed} E0={e0:.6e} E1={e1_txt} -> {path}")
    return 0


# --------------------------------------------------------------- sweep

def _slope_line(name: str, fit) -> str:
    if fit is None:
        return f"{name}: slope undefined (fewer than 3 usable cells)"
    return (f"{name}: slope {fit['slope']:.4f} "
            f"(ci95 {fit['ci95']:.4f}, r2 {fit['r2']:.5f})")


def cmd_sweep(args) -> int:
    cfg = _with_seed(_as_sweep(_load(args.config)), args.seed)
    if args.paths is not None:
        if args.paths < 1:
            return _fail("--paths must be at least 1")
        cfg = replace(cfg, paths_per_cell=int(args.paths))
    report = run_sweep(cfg, out_dir=args.out, workers=None)
    if report.get("resumed"):
        print(f"sweep: matching results already in {args.out}, reusing them")
    for c in report["cells"]:
        if c.get("error"):
            print(f"  eps={c['eps']:g} FAILED: {c['error']}")
            continue
        print(f"  eps={c['eps']:<8g} alpha={c['alpha_sigma']:<10.6g} "
              f"E0={c['E0_mean']:.6e}+-{c['E0_se']:.1e} "
              f"E1={c['E1_mean']:.6e}+-{c['E1_se']:.1e} "
              f"blowup={c['blowup_frac']:.2f}")
    print(_slope_line("E0", report["fit_E0"]))
    print(_slope_line("E1", report["fit_E1"]))
    print(f"sweep: {report['model_a']} vs {report['model_b']}, "
          f"{len(report['cells'])} cells -> {os.path.join(args.out, 'sweep.csv')}")
    return 0


# --------------------------------------------------------------- rates

def _refit(rows, key):
    pts = []
    for r in rows:
        try:
            e, v = float(r["eps"]), float(r[key])
        except (KeyError, TypeError, ValueError):
            continue
        if np.isfinite(e) and np.isfinite(v) and e > 0.0 and v > 0.0:
            pts.append((e, v))
    if len(pts) < 3:
        return None
    return fit_rate(pts)


def cmd_rates(args) -> int:
    path = os.path.join(args.out, "sweep.csv")
    if not os.path.exists(path):
        return _fail(f"no sweep table at {path}; run `thinflow sweep` first")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        print(f"rates: {path} has no cells; nothing to fit")
        return 0
    for key, name in (("E0_mean", "E0"), ("E1_mean", "E1")):
        fit = _refit(rows, key)
        if fit is None:
            print(f"{name}: slope undefined (fewer than 3 usable cells)")
        else:
            print(f"{name}: slope {fit.slope:.4f} "
                  f"(ci95 {fit.ci95:.4f}, r2 {fit.r2:.5f})")
    return 0


# --------------------------------------------------------------- check

def _band(grid, rng, kmax=3, ncomp=None):
    shape = ((grid.nx, grid.ny, grid.nz) if ncomp is None
             else (ncomp, grid.nx, grid.ny, grid.nz))
    c = grid.to_spectral(rng.standard_normal(shape))
    keep = ((np.abs(grid.KX) <= kmax) & (np.abs(grid.KY) <= kmax)
            & (np.abs(grid.mz)[None, None, :] <= kmax))
    return grid.dealias(c * keep)


def _check_projectors(grid, rng):
    idem = adj = div = ann = 0.0
    for eps in (1.0, 0.1, 0.01):
        for _ in range(4):
            u = _band(grid, rng, ncomp=3)
            v = _band(grid, rng, ncomp=3)
            once = project_Peps(grid, u, eps)
            twice = project_Peps(grid, once, eps)
            norm = np.sqrt(grid.norm_sq(once, "Leps", eps=eps))
            idem = max(idem, np.sqrt(
                grid.norm_sq(twice - once, "Leps", eps=eps)) / norm)
            lhs = grid.inner_leps(once, v, eps)
            rhs = grid.inner_leps(u, project_Peps(grid, v, eps), eps)
            adj = max(adj, abs(lhs - rhs) / max(abs(lhs), 1.0))
            dmax = np.max(np.abs(grid.to_physical(grid.div3(once))))
            div = max(div, dmax / max(np.max(np.abs(grid.to_physical(u))), 1.0))
            f = _band(grid, rng)
            gf = grid.grad_eps(f, eps)
            scale = np.sqrt(grid.norm_sq(gf, "Leps", eps=eps))
            ann = max(ann, np.sqrt(grid.norm_sq(
                project_Peps(grid, gf, eps), "Leps", eps=eps)) / scale)
    return [
        ("projector_idempotence", idem, idem <= 1e-10),
        ("projector_self_adjoint", adj, adj <= 1e-10),
        ("projector_divergence", div, div <= 1e-10),
        ("projector_annihilation", ann, ann <= 1e-10),
    ]


def _check_vertical_split(grid, rng):
    worst = 0.0
    for _ in range(4):
        c = _band(grid, rng, ncomp=3)
        a = project_A(grid, c)
        r = project_R(grid, c)
        scale = max(np.sqrt(grid.sq_l2(a) * grid.sq_l2(r)), 1e-30)
        worst = max(worst, abs(grid.inner_l2(a, r)) / scale)
        worst = max(worst, np.max(np.abs(a + r - c)) / max(np.max(np.abs(c)), 1.0))
    return [("vertical_split_orthogonality", worst, worst <= 1e-11)]


def _check_fluct_diss(grid, rng):
    model = NoiseModel.from_modes(grid, make_mode_bank(8, seed=7))
    a = model.variance
    worst = 0.0
    for _ in range(4):
        q = _band(grid, rng)
        gq = grid.to_physical(grid.grad3(q))
        lhs = sum(np.mean(np.einsum("jn,jn->n", model.phi[k].reshape(3, -1),
                                    gq.reshape(3, -1)) ** 2)
                  for k in range(model.n_modes))
        rhs = np.mean(np.einsum("in,ijn,jn->n", gq.reshape(3, -1),
                                a.reshape(3, 3, -1), gq.reshape(3, -1)))
        worst = max(worst, abs(lhs - rhs) / max(abs(rhs), 1e-30))
    return [("fluctuation_dissipation", worst, worst <= 1e-10)]


def _check_continuity(grid, rng):
    worst = 0.0
    for _ in range(6):
        v = project_P(grid, _band(grid, rng, ncomp=2))
        w = vertical_velocity(grid, v)
        resid = np.max(np.abs(grid.dz(w) + grid.div_h(v)))
        worst = max(worst, resid / max(np.max(np.abs(v)), 1.0))
    X, _, Z = grid.meshgrid()
    v = np.stack([grid.to_spectral(np.sin(X) * np.sin(np.pi * Z)),
                  np.zeros(grid.kshape, dtype=np.complex128)])
    w = grid.to_physical(vertical_velocity(grid, v))
    expect = np.cos(X) * (np.cos(np.pi * Z) + 1.0) / np.pi
    oracle = np.max(np.abs(w - expect))
    return [
        ("continuity_residual", worst, worst <= 1e-11),
        ("vertical_velocity_oracle", oracle, oracle <= 1e-10),
    ]


def _reduction_pair(grid, initial, noise, va, vb, steps=10):
    """Max abs deviation between two variants integrated on the same
    Brownian increments (same driver seed); exact reductions must agree
    bitwise, so anything nonzero fails."""
    stepper = StepperConfig(dt=1e-3, t_end=steps * 1e-3)

    def final(v):
        model = PreparedModel(grid, v, noise)
        driver = BrownianDriver(seed=3, dt=stepper.dt, n_modes=noise.n_modes)
        return integrate_ensemble(initial, [model], stepper,
                                  driver).runs[0].final_state

    sa, sb = final(va), final(vb)
    if np.array_equal(sa.v, sb.v) and np.array_equal(sa.theta, sb.theta):
        return 0.0
    return float(max(np.max(np.abs(sa.v - sb.v)),
                     np.max(np.abs(sa.theta - sb.theta))))


def _check_reductions(grid, rng):
    noise = NoiseModel.from_modes(grid, make_mode_bank(6, seed=12, amplitude=0.1))
    v = grid.dealias(project_P(grid, 0.3 * _band(grid, rng, ncomp=2)))
    th = grid.dealias(0.05 * _band(grid, rng))
    th[0, 0, 0] = 0.0
    initial = State(grid, v, th, 0.0)
    dns = _reduction_pair(
        grid, initial, noise,
        ModelVariant("ns", eps=0.2, alpha_sigma=0.7),
        ModelVariant("ns_reg", eps=0.2, alpha_sigma=0.7,
                     kernel=KernelK("identity")))
    dpe = _reduction_pair(
        grid, initial, noise,
        ModelVariant("pe_strong", eps=0.2, alpha_sigma=0.7),
        ModelVariant("pe_weak", eps=0.2, alpha_sigma=0.7,
                     kernel=KernelK("zero")))
    return [
        ("ns_regularised_reduction", dns, dns == 0.0),
        ("pe_weak_strong_reduction", dpe, dpe == 0.0),
    ]


def _check_stokes(grid):
    # shear mode: the nonlinearity vanishes identically, the viscous
    # factor is handled exactly, so only roundoff is left
    X, Y, _ = grid.meshgrid()
    phys = np.stack([np.sin(X + Y), -np.sin(X + Y)])
    v = grid.to_spectral(phys)
    s0 = State(grid, v, np.zeros(grid.kshape, dtype=np.complex128), 0.0)
    dt, T = 1e-3, 0.2
    noise = NoiseModel.from_modes(grid, [], upsilon=0.0)
    model = PreparedModel(grid, ModelVariant("ns", eps=0.5), noise)
    run = integrate_ensemble(s0, [model], StepperConfig(dt=dt, t_end=T),
                             BrownianDriver(seed=0, dt=dt, n_modes=0)).runs[0]
    want = v * np.exp(-2.0 * T)
    err = np.max(np.abs(run.final_state.v - want)) / np.max(np.abs(want))
    return [("stokes_decay", err, err <= 1e-6)]


def _check_energy(rng_seed=0):
    cfg = RunConfig(grid=replace(RunConfig().grid, nx=16, ny=16, nz=8),
                    stepper=replace(RunConfig().stepper, t_end=0.1),
                    seed=rng_seed)
    run = run_single(cfg)
    if run.blew_up:
        return [("energy_budget", float("inf"), False)]
    resid = energy_residual(run)
    bound = 5.0 * run.dt
    return [("energy_budget", resid, resid <= bound)]


def cmd_check(args) -> int:
    grid = Grid(16, 16, 8)
    rng = np.random.default_rng(2026)
    results = []
    results += _check_projectors(grid, rng)
    results += _check_vertical_split(grid, rng)
    results += _check_fluct_diss(grid, rng)
    results += _check_continuity(grid, rng)
    results += _check_reductions(grid, rng)
    results += _check_stokes(grid)
    results += _check_energy()
    failed = 0
    for name, value, ok in results:
        failed += 0 if ok else 1
        print(f"{'PASS' if ok else 'FAIL'} {name} ({value:.3e})")
    print(f"check: {len(results) - failed}/{len(results)} passed")
    return 0 if failed == 0 else 1


# ---------------------------------------------------------------- main

def _add_common(p, paths=False):
    p.add_argument("--config", default=None, help="TOML config file")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    if paths:
        p.add_argument("--paths", type=int, default=None,
                       help="override paths_per_cell")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thinflow",
        description="stochastic thin-domain flow solver and rate harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="one model on one Brownian path")
    _add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("couple", help="the model pair on one shared path")
    _add_common(p)
    p.set_defaults(func=cmd_couple)

    p = sub.add_parser("sweep", help="full (eps, alpha) convergence study")
    _add_common(p, paths=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("check", help="fast invariant self-checks")
    _add_common(p)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("rates", help="refit slopes from a stored sweep.csv")
    _add_common(p)
    p.set_defaults(func=cmd_rates)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(str(exc))
    except FileNotFoundError as exc:
        return _fail(str(exc))


if __name__ == "__main__":
    sys.exit(main())

"""Harness wiring: initial states, per-lane noise, cells, reports, sweep
persistence."""

import dataclasses
import json
import os

import numpy as np
import pytest

from thinflow.config import (
    GridConfig,
    KernelConfig,
    NoiseModeConfig,
    PairedModelConfig,
    RunConfig,
    StepperSection,
    SweepConfig,
    config_hash,
)
from thinflow.grid import Grid
from thinflow.harness import (
    PATH_SEED_STRIDE,
    build_initial,
    build_noise,
    build_report,
    report_to_csv,
    run_cell,
    run_coupled,
    run_single,
    run_sweep,
    worker_count,
)


def tiny_run(**kw):
    cfg = RunConfig(grid=GridConfig(8, 8, 4),
                    stepper=StepperSection(dt=2e-3, t_end=1e-2),
                    noise=dataclasses.replace(RunConfig().noise, mode_count=3),
                    seed=3)
    return dataclasses.replace(cfg, **kw)


def tiny_sweep(**kw):
    cfg = SweepConfig(base=tiny_run(), eps_list=(0.2, 0.1, 0.05),
                      paths_per_cell=1)
    return dataclasses.replace(cfg, **kw)


class TestWorkerCount:
    def test_default_is_one(self, monkeypatch):
        monkeypatch.delenv("THINFLOW_WORKERS", raising=False)
        assert worker_count() == 1

    def test_env_var(self, monkeypatch):
        monkeypatch.setenv("THINFLOW_WORKERS", "3")
        assert worker_count() == 3

    def test_argument_wins(self, monkeypatch):
        monkeypatch.setenv("THINFLOW_WORKERS", "3")
        assert worker_count(2) == 2

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            worker_count(0)


class TestInitialStates:
    def test_default_kind_shapes(self):
        g = Grid(8, 8, 4)
        s = build_initial(g, tiny_run())
        assert s.v.shape == (2,) + g.kshape
        assert s.theta.shape == g.kshape
        assert np.max(np.abs(g.to_physical(s.v).imag)) == 0.0

    def test_random_smooth_reproducible(self):
        g = Grid(8, 8, 4)
        ic = dataclasses.replace(RunConfig().initial_condition,
                                 kind="random_smooth", ic_seed=7)
        a = build_initial(g, tiny_run(initial_condition=ic))
        b = build_initial(g, tiny_run(initial_condition=ic))
        assert np.array_equal(a.v, b.v) and np.array_equal(a.theta, b.theta)

    def test_file_round_trip(self, tmp_path):
        g = Grid(8, 8, 4)
        ref = build_initial(g, tiny_run())
        path = os.path.join(tmp_path, "ic.npz")
        np.savez(path, v=g.to_physical(ref.v), theta=g.to_physical(ref.theta))
        ic = dataclasses.replace(RunConfig().initial_condition,
                                 kind="file", path=str(path))
        got = build_initial(g, tiny_run(initial_condition=ic))
        assert np.allclose(got.v, ref.v, atol=1e-13)
        assert np.allclose(got.theta, ref.theta, atol=1e-13)

    def test_file_shape_mismatch(self, tmp_path):
        g = Grid(8, 8, 4)
        path = os.path.join(tmp_path, "bad.npz")
        np.savez(path, v=np.zeros((2, 4, 4, 4)), theta=np.zeros((4, 4, 4)))
        ic = dataclasses.replace(RunConfig().initial_condition,
                                 kind="file", path=str(path))
        with pytest.raises(ValueError, match="shape"):
            build_initial(g, tiny_run(initial_condition=ic))


class TestLaneNoise:
    # the bank doubles when vertical_coupling > 0: planar modes first,
    # then one companion channel per mode holding only the lifted part
    def test_vertical_lane_gets_companions(self):
        g = Grid(8, 8, 4)
        cfg = tiny_run()
        k = cfg.noise.mode_count
        model = build_noise(g, cfg, eps=0.2, alpha_sigma=1.0, vertical=True)
        assert model.n_modes == 2 * k
        assert np.all(model.phi[k:, :2] == 0.0)
        assert np.max(np.abs(model.phi[k:, 2])) > 0.0
        assert np.array_equal(model.phi[k:, 2, :, :, :1].repeat(g.nz, axis=-1),
                              model.phi[k:, 2])

    def test_hydrostatic_lane_companions_are_zero(self):
        g = Grid(8, 8, 4)
        cfg = tiny_run()
        k = cfg.noise.mode_count
        lifted = build_noise(g, cfg, eps=0.2, alpha_sigma=1.0, vertical=True)
        flat = build_noise(g, cfg, eps=0.2, alpha_sigma=1.0, vertical=False)
        assert flat.n_modes == lifted.n_modes
        assert np.all(flat.phi[k:] == 0.0)
        assert np.array_equal(flat.phi[:k], lifted.phi[:k])

    def test_lift_scales_linearly_in_eps(self):
        g = Grid(8, 8, 4)
        cfg = tiny_run()
        k = cfg.noise.mode_count
        m1 = build_noise(g, cfg, eps=0.2, alpha_sigma=1.0, vertical=True)
        m2 = build_noise(g, cfg, eps=0.1, alpha_sigma=1.0, vertical=True)
        # the planar bank is bidimensional, the eps rescaling fixes it
        assert np.array_equal(m1.phi[:k], m2.phi[:k])
        assert np.allclose(m2.phi[k:, 2], 0.5 * m1.phi[k:, 2], atol=1e-15)

    def test_zero_coupling_keeps_planar_bank(self):
        g = Grid(8, 8, 4)
        cfg = tiny_run()
        cfg = dataclasses.replace(
            cfg, noise=dataclasses.replace(cfg.noise, vertical_coupling=0.0))
        model = build_noise(g, cfg, eps=0.2, alpha_sigma=1.0, vertical=True)
        assert model.n_modes == cfg.noise.mode_count
        assert np.all(model.phi[:, 2] == 0.0)

    def test_lifted_bank_divergence_free(self):
        g = Grid(8, 8, 4)
        model = build_noise(g, tiny_run(), eps=0.2, alpha_sigma=1.0,
                            vertical=True)
        assert model.max_divergence() < 1e-12

    def test_explicit_modes_override_generator(self):
        g = Grid(8, 8, 4)
        cfg = tiny_run()
        cfg = dataclasses.replace(cfg, noise=dataclasses.replace(
            cfg.noise, modes=(NoiseModeConfig(kx=1, ky=0, amplitude=0.4),)))
        model = build_noise(g, cfg, eps=0.2, alpha_sigma=1.0, vertical=True)
        assert model.n_modes == 2


class TestRunSingle:
    def test_deterministic_per_seed(self):
        a = run_single(tiny_run())
        b = run_single(tiny_run())
        for key in a.series:
            assert np.array_equal(a.series[key], b.series[key])

    def test_seed_changes_path(self):
        a = run_single(tiny_run())
        b = run_single(tiny_run(seed=4))
        assert not np.array_equal(a.series["u_Leps"], b.series["u_Leps"])

    def test_series_cover_every_recorded_step(self):
        run = run_single(tiny_run())
        n = run.n_steps
        assert len(run.times) == n + 1
        assert run.ledger["energy"].shape == (n + 1,)
        assert run.ledger["mart"].shape == (n,)


class TestCoupledAndCells:
    def test_coupled_runs_share_seed_and_eps(self):
        out = run_coupled(tiny_sweep())
        ra, rb = out.runs
        assert ra.seed == rb.seed
        assert ra.eps == rb.eps
        assert ra.variant_tag == "ns_reg" and rb.variant_tag == "pe_weak"

    def test_identical_pair_has_zero_errors(self):
        # regularised model with identity kernel is bitwise the plain one
        cfg = tiny_sweep(
            model_a=PairedModelConfig("ns_reg", KernelConfig("identity")),
            model_b=PairedModelConfig("ns"))
        cell = run_cell(cfg, eps=0.2)
        assert cell["n_paths"] == 1
        for row in cell["paths"]:
            assert row["E0"] == 0.0
            assert row["E1"] == 0.0
            assert not row["blew_up"]

    def test_trivial_pair_flags_undefined_slope(self):
        cfg = tiny_sweep(
            model_a=PairedModelConfig("ns_reg", KernelConfig("identity")),
            model_b=PairedModelConfig("ns"))
        report = run_sweep(cfg)
        assert report["slope_undefined"] is True
        assert report["fit_E0"] is None
        text = report_to_csv(report)
        last = text.splitlines()[-1].split(",")
        assert last[-2] == "" and last[-1] == ""

    def test_synthetic_quadratic_cells_fit_slope_two(self):
        cfg = tiny_sweep()
        cells = [{"eps": e, "alpha_sigma": 1.0, "n_paths": 1, "n_ok": 1,
                  "blowup_frac": 0.0,
                  "E0_mean": 7.0 * e ** 2, "E0_se": 0.0,
                  "E1_mean": 7.0 * e ** 2, "E1_se": 0.0,
                  "moment_mean": 1.0, "sup4_mean": 1.0, "paths": []}
                 for e in cfg.eps_list]
        report = build_report(cfg, cells)
        assert report["fit_E0"]["slope"] == pytest.approx(2.0, abs=1e-12)
        assert report["fit_E1"]["slope"] == pytest.approx(2.0, abs=1e-12)
        assert report["fit_E0"]["r2"] == pytest.approx(1.0, abs=1e-12)

    def test_cell_rows_use_strided_path_seeds(self):
        cfg = tiny_sweep(paths_per_cell=2)
        cell = run_cell(cfg, eps=0.1)
        seeds = [r["driver_seed"] for r in cell["paths"]]
        assert seeds == [cfg.base.seed, cfg.base.seed + PATH_SEED_STRIDE]

    def test_power_rule_sets_alpha(self):
        from thinflow.config import AlphaRule
        cfg = tiny_sweep(alpha_rule=AlphaRule("power", 0.5))
        cell = run_cell(cfg, eps=0.25)
        assert cell["alpha_sigma"] == pytest.approx(2.0)


class TestSweepPersistence:
    def test_outputs_written(self, tmp_path):
        cfg = tiny_sweep()
        out = str(tmp_path)
        report = run_sweep(cfg, out_dir=out)
        assert os.path.exists(os.path.join(out, "sweep.csv"))
        assert os.path.exists(os.path.join(out, "sweep.json"))
        for eps in cfg.eps_list:
            assert os.path.exists(
                os.path.join(out, "cells", f"{eps:g}_{cfg.base.seed}.json"))
        assert not report.get("resumed")

    def test_csv_bytes_reproducible(self, tmp_path):
        cfg = tiny_sweep()
        a, b = os.path.join(tmp_path, "a"), os.path.join(tmp_path, "b")
        run_sweep(cfg, out_dir=a)
        run_sweep(cfg, out_dir=b)
        with open(os.path.join(a, "sweep.csv"), "rb") as fh:
            bytes_a = fh.read()
        with open(os.path.join(b, "sweep.csv"), "rb") as fh:
            bytes_b = fh.read()
        assert bytes_a == bytes_b

    def test_matching_rerun_is_noop(self, tmp_path):
        cfg = tiny_sweep()
        out = str(tmp_path)
        first = run_sweep(cfg, out_dir=out)
        stamp = os.path.getmtime(os.path.join(out, "sweep.csv"))
        second = run_sweep(cfg, out_dir=out)
        assert second.get("resumed") is True
        assert second["config_hash"] == first["config_hash"]
        assert os.path.getmtime(os.path.join(out, "sweep.csv")) == stamp

    def test_config_change_recomputes(self, tmp_path):
        out = str(tmp_path)
        run_sweep(tiny_sweep(), out_dir=out)
        other = tiny_sweep(base=tiny_run(seed=11))
        report = run_sweep(other, out_dir=out)
        assert not report.get("resumed")
        assert report["config_hash"] == config_hash(other)

    def test_finished_cells_survive_partial_reruns(self, tmp_path):
        cfg = tiny_sweep()
        out = str(tmp_path)
        run_sweep(cfg, out_dir=out)
        with open(os.path.join(out, "sweep.csv"), "rb") as fh:
            ref = fh.read()
        # losing the report but not the cells must reproduce it bit for bit
        os.remove(os.path.join(out, "sweep.json"))
        cpath = os.path.join(out, "cells", f"0.1_{cfg.base.seed}.json")
        before = os.path.getmtime(cpath)
        report = run_sweep(cfg, out_dir=out)
        assert not report.get("resumed")
        assert os.path.getmtime(cpath) == before
        with open(os.path.join(out, "sweep.csv"), "rb") as fh:
            assert fh.read() == ref

    def test_empty_report_is_header_only(self):
        text = report_to_csv({"cells": [], "model_a": "ns", "model_b": "pe_weak",
                              "fit_E0": None, "gamma": None})
        lines = text.splitlines()
        assert len(lines) == 1
        assert lines[0].startswith("eps,alpha_sigma,gamma")

    def test_stale_cell_json_ignored(self, tmp_path):
        cfg = tiny_sweep()
        out = str(tmp_path)
        cdir = os.path.join(out, "cells")
        os.makedirs(cdir)
        with open(os.path.join(cdir, f"0.2_{cfg.base.seed}.json"), "w") as fh:
            json.dump({"config_hash": "something-else", "cell": {}}, fh)
        report = run_sweep(cfg, out_dir=out)
        cell = report["cells"][0]
        assert cell["eps"] == 0.2 and cell["n_paths"] == 1

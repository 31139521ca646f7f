"""Noise model construction, variance algebra, rescaling, increments."""

import numpy as np
import pytest

from thinflow.noise import (
    BrownianDriver,
    ModeSpec,
    NoiseModel,
    build_2d_divfree_modes,
    ito_stokes_drift,
    make_mode_bank,
    regularity_audit,
    sample_increments,
    scale_noise_map,
    variance_tensor,
)

from conftest import random_smooth_scalar


def shear_model(grid, c1=1.0, c2=1.0):
    """Single handmade mode phi = (c1 sin y, c2 sin x, 0)."""
    X, Y, _ = grid.meshgrid()
    phi = np.zeros((1, 3, grid.nx, grid.ny, grid.nz))
    phi[0, 0] = c1 * np.sin(Y)
    phi[0, 1] = c2 * np.sin(X)
    return NoiseModel(grid, phi)


class TestModeConstruction:
    def test_streamfunction_curl_example(self, grid):
        # cos x cos y splits into wavevectors (1,1) and (1,-1), half weight each
        model = build_2d_divfree_modes(grid, [(1, 1, 0.5), (1, -1, 0.5)])
        X, Y, _ = grid.meshgrid()
        phi = model.phi.sum(axis=0)
        assert np.allclose(phi[0], -np.cos(X) * np.sin(Y), atol=1e-12)
        assert np.allclose(phi[1], np.sin(X) * np.cos(Y), atol=1e-12)
        assert np.allclose(phi[2], 0.0)

    def test_single_mode_z_independent(self, grid):
        model = build_2d_divfree_modes(grid, [(1, 0, 0.7)])
        X, _, _ = grid.meshgrid()
        assert np.allclose(model.phi[0, 1], 0.7 * np.sin(X), atol=1e-12)
        assert np.allclose(model.phi[0, 0], 0.0)
        # every z-plane identical
        assert np.array_equal(model.phi[..., 0], model.phi[..., grid.nz // 2])

    def test_bank_divergence_free(self, grid):
        model = NoiseModel.from_modes(grid, make_mode_bank(8, seed=3))
        assert model.max_divergence() < 1e-12

    def test_z_dependent_mode_divergence_free(self, grid):
        modes = [ModeSpec(kx=1, ky=2, amplitude=0.4, zmult=2, amp_z=0.3)]
        model = NoiseModel.from_modes(grid, modes)
        assert model.max_divergence() < 1e-12

    def test_zero_wavevector_rejected(self, grid):
        with pytest.raises(ValueError):
            build_2d_divfree_modes(grid, [(0, 0, 1.0)])

    def test_empty_spec_rejected(self, grid):
        with pytest.raises(ValueError):
            build_2d_divfree_modes(grid, [])

    def test_fractional_vertical_frequency_rejected(self, grid):
        with pytest.raises(ValueError):
            NoiseModel.from_modes(grid, [ModeSpec(kx=1, ky=0, amplitude=1.0, zmult=0.5)])

    def test_phi_read_only(self, grid):
        model = build_2d_divfree_modes(grid, [(1, 0, 1.0)])
        with pytest.raises(ValueError):
            model.phi[0, 0, 0, 0, 0] = 1.0


class TestVarianceTensor:
    def test_shear_outer_product(self, grid):
        model = shear_model(grid)
        a = variance_tensor(model)
        X, Y, _ = grid.meshgrid()
        assert np.allclose(a[0, 0], np.sin(Y) ** 2, atol=1e-14)
        assert np.allclose(a[0, 1], np.sin(X) * np.sin(Y), atol=1e-14)
        assert np.allclose(a[1, 1], np.sin(X) ** 2, atol=1e-14)
        assert np.allclose(a[2], 0.0)
        assert np.allclose(a[:, 2], 0.0)

    def test_constant_mode(self, grid):
        phi = np.zeros((1, 3, grid.nx, grid.ny, grid.nz))
        phi[0, 0] = 0.3
        a = NoiseModel(grid, phi).variance
        assert np.allclose(a[0, 0], 0.09, atol=1e-15)
        assert np.allclose(a[0, 1], 0.0)
        assert np.allclose(a[1, 1], 0.0)
        assert np.allclose(a[2, 2], 0.0)

    def test_bidimensional_vertical_blocks_vanish(self, grid):
        model = NoiseModel.from_modes(grid, make_mode_bank(6, seed=1))
        a = model.variance
        assert np.all(a[2] == 0.0)
        assert np.all(a[:, 2] == 0.0)

    def test_two_orthogonal_modes_sum(self, grid):
        m1 = build_2d_divfree_modes(grid, [(1, 0, 0.8)])
        m2 = build_2d_divfree_modes(grid, [(0, 1, 0.5)])
        both = build_2d_divfree_modes(grid, [(1, 0, 0.8), (0, 1, 0.5)])
        assert np.allclose(both.variance, m1.variance + m2.variance, atol=1e-15)

    def test_symmetry_and_psd(self, grid):
        model = NoiseModel.from_modes(grid, make_mode_bank(8, seed=5))
        a = model.variance
        assert np.array_equal(a, np.swapaxes(a, 0, 1))
        pts = np.moveaxis(a.reshape(3, 3, -1), -1, 0)  # (npts, 3, 3)
        eigs = np.linalg.eigvalsh(pts)
        assert eigs.min() >= -1e-10


class TestStokesDrift:
    def test_shear_drift(self, grid):
        model = shear_model(grid)
        us = ito_stokes_drift(model)
        X, Y, _ = grid.meshgrid()
        assert np.allclose(us[0], 0.5 * np.sin(X) * np.cos(Y), atol=1e-12)
        assert np.allclose(us[1], 0.5 * np.sin(Y) * np.cos(X), atol=1e-12)
        assert np.allclose(us[2], 0.0, atol=1e-13)

    def test_constant_variance_zero_drift(self, grid):
        phi = np.zeros((1, 3, grid.nx, grid.ny, grid.nz))
        phi[0, 0] = 0.4
        phi[0, 1] = -0.2
        us = ito_stokes_drift(NoiseModel(grid, phi))
        assert np.max(np.abs(us)) < 1e-15

    def test_single_wavevector_modes_have_no_drift(self, grid):
        # each curl mode's self-advection cancels, so the whole bank drifts nowhere
        model = NoiseModel.from_modes(grid, make_mode_bank(8, seed=2))
        assert np.max(np.abs(model.stokes_drift)) < 1e-13

    def test_horizontal_variance_no_vertical_drift(self, grid):
        model = shear_model(grid, 0.3, 1.1)
        assert np.max(np.abs(ito_stokes_drift(model)[2])) < 1e-14


class TestFluctuationDissipation:
    def test_quadratic_form_identity(self, grid, rng):
        # sum_k ||phi_k . grad q||^2 = (a grad q, grad q), pointwise algebra
        model = NoiseModel.from_modes(grid, make_mode_bank(8, seed=7))
        a = model.variance
        for _ in range(5):
            q = random_smooth_scalar(grid, rng)
            gq = grid.to_physical(grid.grad3(q))
            lhs = sum(np.mean(np.einsum("jn,jn->n", model.phi[k].reshape(3, -1),
                                        gq.reshape(3, -1)) ** 2)
                      for k in range(model.n_modes))
            rhs = np.mean(np.einsum("in,ijn,jn->n", gq.reshape(3, -1),
                                    a.reshape(3, 3, -1), gq.reshape(3, -1)))
            assert abs(lhs - rhs) <= 1e-10 * max(abs(rhs), 1e-30)


class TestScaleMap:
    def test_bidimensional_fixed_point(self, grid):
        model = build_2d_divfree_modes(grid, [(1, 0, 0.8), (1, 1, 0.3)])
        scaled = scale_noise_map(model, 0.2)
        assert scaled.modes == model.modes
        assert np.array_equal(scaled.phi, model.phi)

    def test_vertical_variance_rescale(self, grid):
        c = 0.36
        modes = [ModeSpec(kx=0, ky=0, amplitude=0.0, amp_z=np.sqrt(c))]
        model = NoiseModel.from_modes(grid, modes)
        assert np.allclose(model.variance[2, 2], c, atol=1e-15)
        scaled = scale_noise_map(model, 0.1)
        assert np.allclose(scaled.variance[2, 2], 100.0 * c, rtol=1e-12)

    def test_eps_one_is_identity(self, grid):
        modes = [ModeSpec(kx=1, ky=0, amplitude=0.5, zmult=2, amp_z=0.7)]
        assert scale_noise_map(modes, 1.0) == modes

    def test_composition_law(self):
        modes = [ModeSpec(kx=1, ky=2, amplitude=0.5, zmult=2, amp_z=0.7),
                 ModeSpec(kx=2, ky=0, amplitude=0.1, zmult=4, amp_z=-0.2)]
        twice = scale_noise_map(scale_noise_map(modes, 0.5), 0.25)
        once = scale_noise_map(modes, 0.125)
        assert twice == once  # dyadic eps keeps the float algebra exact

    def test_composition_law_generic_eps(self):
        modes = [ModeSpec(kx=1, ky=1, amplitude=0.3, zmult=3, amp_z=0.9)]
        twice = scale_noise_map(scale_noise_map(modes, 0.3), 0.7)[0]
        once = scale_noise_map(modes, 0.21)[0]
        assert np.isclose(twice.zmult, once.zmult, rtol=1e-14)
        assert np.isclose(twice.amp_z, once.amp_z, rtol=1e-14)

    def test_eps_nonpositive_rejected(self, grid):
        model = build_2d_divfree_modes(grid, [(1, 0, 1.0)])
        with pytest.raises(ValueError):
            scale_noise_map(model, 0.0)

    def test_array_backed_model_rejected(self, grid):
        model = shear_model(grid)
        with pytest.raises(ValueError):
            scale_noise_map(model, 0.5)


class TestBrownianDriver:
    def test_bitwise_determinism(self):
        d1 = BrownianDriver(seed=42, dt=0.01, n_modes=6)
        d2 = BrownianDriver(seed=42, dt=0.01, n_modes=6)
        for step in (0, 1, 17, 4096):
            assert np.array_equal(d1.increments(step), d2.increments(step))

    def test_seeds_and_steps_decorrelate(self):
        d1 = BrownianDriver(seed=1, dt=0.01, n_modes=4)
        d2 = BrownianDriver(seed=2, dt=0.01, n_modes=4)
        assert not np.array_equal(d1.increments(0), d2.increments(0))
        assert not np.array_equal(d1.increments(0), d1.increments(1))

    def test_moments(self):
        dt = 0.02
        driver = BrownianDriver(seed=9, dt=dt, n_modes=100)
        samples = np.stack([sample_increments(driver, s) for s in range(1000)])
        flat = samples.ravel()  # 1e5 draws
        assert abs(flat.var() - dt) < 0.03 * dt
        assert abs(flat.mean()) < 3.0 * np.sqrt(dt / flat.size)

    def test_cross_mode_correlation_small(self):
        driver = BrownianDriver(seed=11, dt=1.0, n_modes=2)
        samples = np.stack([driver.increments(s) for s in range(100000)])
        rho = np.corrcoef(samples[:, 0], samples[:, 1])[0, 1]
        assert abs(rho) < 0.02

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            BrownianDriver(seed=1, dt=0.0, n_modes=4)
        driver = BrownianDriver(seed=1, dt=0.1, n_modes=4)
        with pytest.raises(ValueError):
            driver.increments(-1)


class TestRegularityAudit:
    def test_empty_model(self, grid):
        report = regularity_audit(NoiseModel.from_modes(grid, []))
        assert report["h4_sum"] == 0.0
        assert report["linf_max"] == 0.0
        assert report["us_h4"] == 0.0
        assert report["div_ok"]

    def test_unit_mode_h4_value(self, grid):
        # phi = (0, sin x, 0): ||phi||^2 = VOLUME/2, weight (1+1)^4
        model = build_2d_divfree_modes(grid, [(1, 0, 1.0)])
        report = regularity_audit(model)
        expect = 16.0 * 8.0 * np.pi ** 2 / 2.0
        assert np.isclose(report["h4_sum"], expect, rtol=1e-12)
        assert report["div_ok"]
        assert report["flags"] == []

    def test_divergence_violation_flagged(self, grid):
        X, _, _ = grid.meshgrid()
        phi = np.zeros((1, 3, grid.nx, grid.ny, grid.nz))
        phi[0, 0] = np.sin(X)  # div = cos x, deliberately broken
        report = regularity_audit(NoiseModel(grid, phi))
        assert not report["div_ok"]
        assert report["flags"]

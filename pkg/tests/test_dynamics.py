"""Model RHS assembly: continuity, advection oracle, hydrostatic balance,
variant reductions, tracer conservation."""

import numpy as np
import pytest

from thinflow.dynamics import (
    ModelVariant,
    PhysicalConstants,
    PreparedModel,
    State,
    buoyancy,
    vertical_velocity,
)
from thinflow.noise import NoiseModel, build_2d_divfree_modes, make_mode_bank
from thinflow.projectors import KernelK, project_P, project_R

from conftest import random_smooth_scalar


def empty_noise(grid, upsilon=0.0):
    return NoiseModel.from_modes(grid, [], upsilon=upsilon)


def small_bank(grid, upsilon=1.0, amplitude=0.1):
    return NoiseModel.from_modes(grid, make_mode_bank(6, seed=12, amplitude=amplitude),
                                 upsilon=upsilon)


def admissible_state(grid, rng, amp=0.3, theta_amp=0.05):
    v = amp * random_smooth_scalar(grid, rng, ncomp=2)
    v = grid.dealias(project_P(grid, v))
    th = theta_amp * random_smooth_scalar(grid, rng)
    th = grid.dealias(th)
    th[0, 0, 0] = 0.0
    return State(grid, v, th, 0.0)


class TestModelVariant:
    def test_tag_validation(self):
        with pytest.raises(ValueError):
            ModelVariant("boussinesq", eps=0.1)
        with pytest.raises(ValueError):
            ModelVariant("ns", eps=1.5)
        with pytest.raises(ValueError):
            ModelVariant("ns", eps=0.1, alpha_sigma=-1.0)

    def test_kernel_forcing(self):
        v = ModelVariant("ns", eps=0.1, kernel=KernelK("raised_cosine", cutoff=4.0))
        assert v.kernel.kind == "identity"
        v = ModelVariant("pe_strong", eps=0.1, kernel=KernelK("identity"))
        assert v.kernel.kind == "zero"
        v = ModelVariant("ns_reg", eps=0.1, kernel=KernelK("raised_cosine", cutoff=4.0))
        assert v.kernel.kind == "raised_cosine"

    def test_families(self):
        assert ModelVariant("ns", eps=0.5).family == "ns"
        assert ModelVariant("ns_reg", eps=0.5).family == "ns"
        assert ModelVariant("pe_strong", eps=0.5).family == "pe"
        assert ModelVariant("pe_weak", eps=0.5).family == "pe"


class TestPhysicalConstants:
    def test_defaults_and_nu(self):
        c = PhysicalConstants()
        assert c.rho0 == 1000.0 and c.g == 9.81 and c.mu == 1.0
        assert c.nu(0.1) == pytest.approx(0.01)

    def test_validation(self):
        with pytest.raises(ValueError):
            PhysicalConstants(rho0=-1.0)


class TestVerticalVelocity:
    def test_baroclinic_oracle(self, grid):
        X, _, Z = grid.meshgrid()
        v = np.stack([grid.to_spectral(np.sin(X) * np.sin(np.pi * Z)),
                      np.zeros(grid.kshape, dtype=np.complex128)])
        w = grid.to_physical(vertical_velocity(grid, v))
        expect = np.cos(X) * (np.cos(np.pi * Z) + 1.0) / np.pi
        assert np.max(np.abs(w - expect)) < 1e-10

    def test_zindependent_divfree_gives_zero(self, grid):
        X, Y, _ = grid.meshgrid()
        # v = perp-gradient of cos(x+y), divergence-free and barotropic
        v = np.stack([grid.to_spectral(np.sin(X + Y)),
                      grid.to_spectral(-np.sin(X + Y))])
        w = vertical_velocity(grid, v)
        assert np.max(np.abs(w)) < 1e-14

    def test_continuity_identity(self, grid, rng):
        for _ in range(10):
            v = project_P(grid, random_smooth_scalar(grid, rng, ncomp=2))
            w = vertical_velocity(grid, v)
            resid = grid.dz(w) + grid.div_h(v)
            assert np.max(np.abs(resid)) <= 1e-11 * max(np.max(np.abs(v)), 1.0)

    def test_barotropic_divergence_rejected(self, grid):
        X, _, _ = grid.meshgrid()
        v = np.stack([grid.to_spectral(np.sin(X)),
                      np.zeros(grid.kshape, dtype=np.complex128)])
        with pytest.raises(ValueError, match="barotropic divergence"):
            vertical_velocity(grid, v)


class TestBuoyancy:
    def test_values(self, grid):
        c = PhysicalConstants()
        th = np.zeros(grid.kshape, dtype=np.complex128)
        assert np.all(buoyancy(th, c) == 0.0)
        X, _, _ = grid.meshgrid()
        th = grid.to_spectral(np.sin(X))
        assert np.allclose(grid.to_physical(buoyancy(th, c)), 9.81 * np.sin(X),
                           atol=1e-12)


class TestDriftAssembly:
    @pytest.mark.parametrize("tag", ["ns", "ns_reg", "pe_strong", "pe_weak"])
    def test_zero_state_zero_drift(self, grid, tag):
        variant = ModelVariant(tag, eps=0.1, kernel=KernelK("raised_cosine", cutoff=3.0))
        model = PreparedModel(grid, variant, small_bank(grid))
        dv, dth = model.rhs_drift(State.zero(grid))
        assert np.all(dv == 0.0)
        assert np.all(dth == 0.0)

    def test_advection_oracle_single_mode(self, grid):
        # v = (A sin x sin pi z, 0), theta = 0, no noise: the drift must equal
        # P_eps[-(u . grad)u] + lap(u) with u built from analytic derivatives
        A = 0.4
        eps = 0.3
        X, _, Z = grid.meshgrid()
        sx, cx = np.sin(X), np.cos(X)
        sz, cz = np.sin(np.pi * Z), np.cos(np.pi * Z)
        u1 = A * sx * sz
        w = A * cx * (cz + 1.0) / np.pi
        du1_dx = A * cx * sz
        du1_dz = A * np.pi * sx * cz
        dw_dx = -A * sx * (cz + 1.0) / np.pi
        dw_dz = -A * cx * sz
        conv1 = u1 * du1_dx + w * du1_dz
        conv3 = u1 * dw_dx + w * dw_dz

        variant = ModelVariant("ns", eps=eps)
        model = PreparedModel(grid, variant, empty_noise(grid))
        v = np.stack([grid.to_spectral(u1),
                      np.zeros(grid.kshape, dtype=np.complex128)])
        state = State(grid, v, np.zeros(grid.kshape, dtype=np.complex128))
        dv, dth = model.rhs_drift(state)

        from thinflow.projectors import project_Peps
        F = np.stack([grid.to_spectral(-conv1),
                      np.zeros(grid.kshape, dtype=np.complex128),
                      grid.to_spectral(-conv3)])
        u_hat = np.stack([v[0], v[1], grid.to_spectral(w)])
        oracle = project_Peps(grid, F, eps)[:2] + np.stack(
            [grid.laplacian(u_hat[0]), grid.laplacian(u_hat[1])])
        scale = np.max(np.abs(oracle))
        assert np.max(np.abs(dv - oracle)) <= 1e-8 * scale
        assert np.all(dth == 0.0)

    def test_noise_free_pe_strong_weak_identical(self, grid, rng):
        state = admissible_state(grid, rng)
        noise = empty_noise(grid)
        weak = PreparedModel(grid, ModelVariant(
            "pe_weak", eps=0.1, kernel=KernelK("raised_cosine", cutoff=3.0)), noise)
        strong = PreparedModel(grid, ModelVariant("pe_strong", eps=0.1), noise)
        dv_w, dth_w = weak.rhs_drift(state)
        dv_s, dth_s = strong.rhs_drift(state)
        assert np.array_equal(dv_w, dv_s)
        assert np.array_equal(dth_w, dth_s)

    @pytest.mark.parametrize("tag", ["ns", "ns_reg", "pe_strong", "pe_weak"])
    def test_barotropic_divergence_of_drift_vanishes(self, grid, rng, tag):
        variant = ModelVariant(tag, eps=0.2, alpha_sigma=1.0,
                               kernel=KernelK("raised_cosine", cutoff=3.0))
        model = PreparedModel(grid, variant, small_bank(grid))
        state = admissible_state(grid, rng)
        dv, _ = model.rhs_drift(state)
        bar = grid.div_h(dv)[..., 0]
        assert np.max(np.abs(bar)) <= 1e-10 * max(np.max(np.abs(dv)), 1.0)

    def test_tracer_mean_conserved(self, grid, rng):
        variant = ModelVariant("ns_reg", eps=0.2,
                               kernel=KernelK("raised_cosine", cutoff=3.0))
        model = PreparedModel(grid, variant, small_bank(grid))
        state = admissible_state(grid, rng)
        _, dth = model.rhs_drift(state)
        _, modes_th = model.rhs_diffusion_modes(state)
        scale = max(float(np.max(np.abs(state.theta))), 1e-30)
        assert abs(dth[0, 0, 0]) <= 1e-13 * scale
        assert np.max(np.abs(modes_th[:, 0, 0, 0])) <= 1e-13 * scale

    def test_mean_momentum_barotropic_only(self, grid, rng):
        # drift at the zero wavevector: projector gauge keeps it finite
        model = PreparedModel(grid, ModelVariant("ns", eps=0.1), small_bank(grid))
        dv, _ = model.rhs_drift(admissible_state(grid, rng))
        mean = dv[:, 0, 0, 0]
        assert np.all(np.isfinite(mean.real)) and np.all(np.isfinite(mean.imag))


class TestHydrostaticPressure:
    def test_strong_balance(self, grid):
        X, _, Z = grid.meshgrid()
        th = grid.to_spectral(0.1 * np.sin(X) * np.sin(np.pi * Z))
        model = PreparedModel(grid, ModelVariant("pe_strong", eps=0.1),
                              empty_noise(grid))
        w = np.zeros(grid.kshape, dtype=np.complex128)
        p = model.hydrostatic_pressure(th, w)
        resid = grid.dz(p) + 9.81 * project_R(grid, th)
        assert np.max(np.abs(resid)) <= 1e-11 * np.max(np.abs(9.81 * th))

    def test_horizontal_theta_only_no_force(self, grid):
        _, _, Z = grid.meshgrid()
        th = grid.to_spectral(0.2 * np.sin(np.pi * Z))  # theta = theta(z)
        model = PreparedModel(grid, ModelVariant("pe_strong", eps=0.1),
                              empty_noise(grid))
        p = model.hydrostatic_pressure(th, np.zeros_like(th))
        force = np.stack([grid.dx(p), grid.dy(p)])
        assert np.max(np.abs(force)) < 1e-14

    def test_zero_inputs_zero_pressure(self, grid):
        model = PreparedModel(grid, ModelVariant(
            "pe_weak", eps=0.1, alpha_sigma=1.0,
            kernel=KernelK("raised_cosine", cutoff=3.0)), small_bank(grid))
        z = np.zeros(grid.kshape, dtype=np.complex128)
        assert np.all(model.hydrostatic_pressure(z, z) == 0.0)

    def test_rejected_for_ns(self, grid):
        model = PreparedModel(grid, ModelVariant("ns", eps=0.1), empty_noise(grid))
        z = np.zeros(grid.kshape, dtype=np.complex128)
        with pytest.raises(ValueError):
            model.hydrostatic_pressure(z, z)

    def test_weak_kernel_term_enters(self, grid, rng):
        # with a nonzero w the weak balance differs from the strong one
        noise = small_bank(grid)
        th = 0.05 * random_smooth_scalar(grid, rng)
        v = project_P(grid, 0.3 * random_smooth_scalar(grid, rng, ncomp=2))
        w = vertical_velocity(grid, v)
        weak = PreparedModel(grid, ModelVariant(
            "pe_weak", eps=0.5, alpha_sigma=1.0,
            kernel=KernelK("raised_cosine", cutoff=3.0)), noise)
        strong = PreparedModel(grid, ModelVariant("pe_strong", eps=0.5), noise)
        pw = weak.hydrostatic_pressure(th, w)
        ps = strong.hydrostatic_pressure(th, w)
        assert np.max(np.abs(pw - ps)) > 1e-8


class TestDiffusionModes:
    def test_ns_reduction_bitwise(self, grid, rng):
        noise = small_bank(grid)
        state = admissible_state(grid, rng)
        plain = PreparedModel(grid, ModelVariant("ns", eps=0.2, alpha_sigma=0.7), noise)
        reg = PreparedModel(grid, ModelVariant(
            "ns_reg", eps=0.2, alpha_sigma=0.7, kernel=KernelK("identity")), noise)
        dv_a, dth_a = plain.rhs_drift(state)
        dv_b, dth_b = reg.rhs_drift(state)
        assert np.array_equal(dv_a, dv_b) and np.array_equal(dth_a, dth_b)
        ma, ta = plain.rhs_diffusion_modes(state)
        mb, tb = reg.rhs_diffusion_modes(state)
        assert np.array_equal(ma, mb) and np.array_equal(ta, tb)

    def test_pe_reduction_bitwise(self, grid, rng):
        noise = small_bank(grid)
        state = admissible_state(grid, rng)
        strong = PreparedModel(grid, ModelVariant("pe_strong", eps=0.2, alpha_sigma=0.7),
                               noise)
        weak0 = PreparedModel(grid, ModelVariant(
            "pe_weak", eps=0.2, alpha_sigma=0.7, kernel=KernelK("zero")), noise)
        dv_a, dth_a = strong.rhs_drift(state)
        dv_b, dth_b = weak0.rhs_drift(state)
        assert np.array_equal(dv_a, dv_b) and np.array_equal(dth_a, dth_b)
        ma, ta = strong.rhs_diffusion_modes(state)
        mb, tb = weak0.rhs_diffusion_modes(state)
        assert np.array_equal(ma, mb) and np.array_equal(ta, tb)

    def test_weak_martingale_pressure_changes_modes(self, grid, rng):
        noise = small_bank(grid)
        state = admissible_state(grid, rng)
        strong = PreparedModel(grid, ModelVariant("pe_strong", eps=0.5, alpha_sigma=1.0),
                               noise)
        weak = PreparedModel(grid, ModelVariant(
            "pe_weak", eps=0.5, alpha_sigma=1.0,
            kernel=KernelK("raised_cosine", cutoff=3.0)), noise)
        ms, _ = strong.rhs_diffusion_modes(state)
        mw, _ = weak.rhs_diffusion_modes(state)
        assert not np.array_equal(ms, mw)

    def test_constant_mode_constant_field_inert(self, grid):
        # phi constant and u constant: transport and additive both vanish
        phi = np.zeros((1, 3, grid.nx, grid.ny, grid.nz))
        phi[0, 0] = 0.5
        noise = NoiseModel(grid, phi)
        model = PreparedModel(grid, ModelVariant("ns", eps=0.5), noise)
        state = State.zero(grid)
        state.v[0, 0, 0, 0] = 0.25  # constant horizontal flow
        mv, mt = model.rhs_diffusion_modes(state)
        assert np.max(np.abs(mv)) < 1e-14
        assert np.max(np.abs(mt)) < 1e-14

    def test_additive_part_present_without_transport(self, grid, rng):
        model = PreparedModel(grid, ModelVariant("ns", eps=0.2), small_bank(grid))
        model.transport_noise_enabled = False
        mv, mt = model.rhs_diffusion_modes(admissible_state(grid, rng))
        assert np.max(np.abs(mv)) > 1e-8   # laplacian forcing of the modes
        assert np.all(mt == 0.0)

    def test_modes_scale_with_sqrt_upsilon(self, grid, rng):
        state = admissible_state(grid, rng)
        m1 = PreparedModel(grid, ModelVariant("ns", eps=0.2), small_bank(grid, upsilon=1.0))
        m4 = PreparedModel(grid, ModelVariant("ns", eps=0.2), small_bank(grid, upsilon=4.0))
        a, _ = m1.rhs_diffusion_modes(state)
        b, _ = m4.rhs_diffusion_modes(state)
        assert np.allclose(b, 2.0 * a, atol=1e-12 * np.max(np.abs(a)))

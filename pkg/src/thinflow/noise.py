"""Transport-noise models: divergence-free mode banks, variance tensor,
Ito-Stokes drift, thin-domain rescaling, and seeded Brownian increments.

A noise model is a finite bank of divergence-free velocity modes phi_k
plus a scalar intensity upsilon and a vertical scaling alpha_sigma.  By
default modes are bidimensional: horizontal, z-independent curls of a
single-wavevector streamfunction

    psi   = A cos(kx*x + ky*y + phase)
    phi_H = (d_y psi, -d_x psi) = A sin(theta) * (-ky, kx)

which makes each mode divergence-free by construction.  Descriptors may
additionally carry a vertical profile cos(pi*zmult*z + z_phase) on the
horizontal part and a z-independent vertical component amp_z*cos(theta);
neither breaks the divergence constraint (only d_z of the vertical
component enters, and it vanishes).

The thin-domain rescaling acts on descriptors, not on grids: horizontal
parts are sampled at eps*z (zmult -> eps*zmult) and vertical parts are
divided by eps (amp_z -> amp_z/eps).  Bidimensional banks are fixed
points of this map, which is what lets coupled runs share one noise
object across the whole eps sweep.

Brownian increments come from a counter-based generator keyed on
(seed, step), so two models integrating the same path draw bitwise
identical increments without sharing any mutable stream state.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np

from .grid import Grid

DIV_TOL = 1e-12


@dataclass(frozen=True)
class ModeSpec:
    """Analytic descriptor of one noise mode.

    kx, ky are integer horizontal wavenumbers, amplitude scales the
    streamfunction.  zmult is the vertical frequency in units of pi
    (must be an integer to materialize on the periodic grid, but the
    rescaling map may pass through non-integer values), amp_z the
    constant vertical-component amplitude.
    """

    kx: int
    ky: int
    amplitude: float
    phase: float = 0.0
    zmult: float = 0.0
    z_phase: float = 0.0
    amp_z: float = 0.0

    @property
    def bidimensional(self) -> bool:
        return self.zmult == 0.0 and self.amp_z == 0.0


def _materialize_mode(grid: Grid, mode: ModeSpec) -> np.ndarray:
    """Evaluate a descriptor as a physical (3, nx, ny, nz) array."""
    if mode.kx == 0 and mode.ky == 0 and mode.amplitude != 0.0:
        raise ValueError("zero wavevector streamfunction has no curl")
    zm = mode.zmult
    if zm != int(zm):
        raise ValueError(
            f"vertical frequency {zm} is not an integer multiple of pi; "
            "mode cannot be represented on the periodic vertical axis"
        )
    X, Y, Z = grid.meshgrid()
    theta = mode.kx * X + mode.ky * Y + mode.phase
    s = np.sin(theta)
    profile = np.cos(np.pi * zm * Z + mode.z_phase) if (zm != 0.0 or mode.z_phase != 0.0) else 1.0
    phi = np.zeros((3,) + X.shape)
    phi[0] = -mode.ky * mode.amplitude * s * profile
    phi[1] = mode.kx * mode.amplitude * s * profile
    if mode.amp_z != 0.0:
        phi[2] = mode.amp_z * np.cos(theta)
    return phi


class NoiseModel:
    """Finite bank of divergence-free modes with cached derived fields.

    Immutable after construction: phi arrays are marked read-only and
    the variance tensor / Stokes drift are computed once on demand.
    """

    def __init__(self, grid, phi, upsilon=1.0, alpha_sigma=1.0, modes=None):
        phi = np.asarray(phi, dtype=float)
        if phi.ndim != 5 or phi.shape[1] != 3 or phi.shape[2:] != (grid.nx, grid.ny, grid.nz):
            raise ValueError(f"phi must have shape (K, 3, nx, ny, nz), got {phi.shape}")
        if upsilon < 0:
            raise ValueError("upsilon must be nonnegative")
        phi = phi.copy()
        phi.setflags(write=False)
        self.grid = grid
        self.phi = phi
        self.upsilon = float(upsilon)
        self.alpha_sigma = float(alpha_sigma)
        self.modes = tuple(modes) if modes is not None else None

    @classmethod
    def from_modes(cls, grid, modes, upsilon=1.0, alpha_sigma=1.0):
        modes = tuple(modes)
        if not modes:
            phi = np.zeros((0, 3, grid.nx, grid.ny, grid.nz))
        else:
            phi = np.stack([_materialize_mode(grid, m) for m in modes])
        return cls(grid, phi, upsilon=upsilon, alpha_sigma=alpha_sigma, modes=modes)

    @property
    def n_modes(self) -> int:
        return self.phi.shape[0]

    @cached_property
    def phi_hat(self) -> np.ndarray:
        """Spectral coefficients of every mode, shape (K, 3, kshape)."""
        return self.grid.to_spectral(self.phi)

    @cached_property
    def variance(self) -> np.ndarray:
        """a(x) = sum_k phi_k phi_k^T, shape (3, 3, nx, ny, nz). Exact pointwise."""
        shape = (self.grid.nx, self.grid.ny, self.grid.nz)
        if self.n_modes == 0:
            a = np.zeros((3, 3) + shape)
            a.setflags(write=False)
            return a
        a = np.einsum("kin,kjn->ijn", self.phi.reshape(self.n_modes, 3, -1),
                      self.phi.reshape(self.n_modes, 3, -1))
        a = a.reshape((3, 3) + shape)
        a.setflags(write=False)
        return a

    @cached_property
    def stokes_drift_hat(self) -> np.ndarray:
        """u_s = (1/2) row-wise divergence of the variance tensor, spectral."""
        a_hat = self.grid.to_spectral(self.variance)
        us = 0.5 * (self.grid.dx(a_hat[:, 0]) + self.grid.dy(a_hat[:, 1])
                    + self.grid.dz(a_hat[:, 2]))
        return us

    @cached_property
    def stokes_drift(self) -> np.ndarray:
        return self.grid.to_physical(self.stokes_drift_hat)

    def max_divergence(self) -> float:
        """sup over modes and points of |div phi_k|; zero for an empty bank."""
        if self.n_modes == 0:
            return 0.0
        div = np.stack([self.grid.div3(self.phi_hat[k]) for k in range(self.n_modes)])
        return float(np.max(np.abs(self.grid.to_physical(div))))


def variance_tensor(model: NoiseModel) -> np.ndarray:
    return model.variance


def ito_stokes_drift(model: NoiseModel) -> np.ndarray:
    """Physical-space u_s field, shape (3, nx, ny, nz)."""
    return model.stokes_drift


def build_2d_divfree_modes(grid, spec, upsilon=1.0, alpha_sigma=1.0,
                           phases=None) -> NoiseModel:
    """Bidimensional bank from a list of (kx, ky, amplitude) triples.

    Each entry becomes the curl of one streamfunction mode; optional
    per-mode phases default to zero.
    """
    spec = list(spec)
    if not spec:
        raise ValueError("need at least one mode")
    if phases is None:
        phases = [0.0] * len(spec)
    modes = []
    for (kx, ky, amp), ph in zip(spec, phases):
        if kx == 0 and ky == 0:
            raise ValueError("zero wavevector requested")
        modes.append(ModeSpec(kx=int(kx), ky=int(ky), amplitude=float(amp), phase=float(ph)))
    return NoiseModel.from_modes(grid, modes, upsilon=upsilon, alpha_sigma=alpha_sigma)


def make_mode_bank(mode_count=8, seed=0, max_wave=2, amplitude=1.0):
    """Deterministic low-wavevector descriptor bank with 1/|k|^2 decay.

    Walks distinct horizontal wavevectors in a fixed order (excluding
    zero and sign-duplicates), assigns amplitude/|k|^2 and a seeded
    phase to each.  Used when a config lists no explicit modes.
    """
    waves = []
    for kx in range(0, max_wave + 1):
        for ky in range(-max_wave, max_wave + 1):
            if kx == 0 and ky <= 0:
                continue  # drop zero and keep one of each +/- pair
            waves.append((kx, ky))
    waves.sort(key=lambda w: (w[0] ** 2 + w[1] ** 2, w))
    if mode_count > len(waves):
        raise ValueError(f"only {len(waves)} distinct wavevectors at max_wave={max_wave}")
    rng = np.random.default_rng(seed)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=mode_count)
    bank = []
    for (kx, ky), ph in zip(waves[:mode_count], phases):
        k2 = kx * kx + ky * ky
        bank.append(ModeSpec(kx=kx, ky=ky, amplitude=amplitude / k2, phase=float(ph)))
    return bank


def scale_noise_map(model, eps: float):
    """Thin-domain rescaling of a descriptor-backed model.

    Horizontal parts are sampled at eps*z, vertical parts divided by
    eps, so variance blocks pick up factors (1, 1/eps, 1/eps^2) on
    (a_H, a_Hz, a_zz).  Bidimensional banks map to themselves.  Accepts
    a NoiseModel built from descriptors or a plain descriptor list.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if isinstance(model, NoiseModel):
        if model.modes is None:
            raise ValueError("model was built from raw arrays; no descriptors to rescale")
        scaled = [_scale_mode(m, eps) for m in model.modes]
        return NoiseModel.from_modes(model.grid, scaled, upsilon=model.upsilon,
                                     alpha_sigma=model.alpha_sigma)
    return [_scale_mode(m, eps) for m in model]


def _scale_mode(mode: ModeSpec, eps: float) -> ModeSpec:
    if mode.bidimensional:
        return mode
    return replace(mode, zmult=mode.zmult * eps, amp_z=mode.amp_z / eps)


def regularity_audit(model: NoiseModel) -> dict:
    """Summability and smoothness report for a mode bank.

    Reports sum_k ||phi_k||^2_{H^4}, the largest pointwise mode value,
    an H^4 value for the Stokes drift, and the worst divergence residual
    (flagged when it exceeds tolerance).  All sums are zero for an empty
    bank.
    """
    g = model.grid
    if model.n_modes == 0:
        return {"h4_sum": 0.0, "linf_max": 0.0, "us_h4": 0.0,
                "div_max": 0.0, "div_ok": True, "flags": []}
    h4_sum = float(sum(g.sq_sobolev(model.phi_hat[k], 4.0) for k in range(model.n_modes)))
    linf_max = float(np.max(np.abs(model.phi)))
    us_h4 = float(np.sqrt(g.sq_sobolev(model.stokes_drift_hat, 4.0)))
    div_max = model.max_divergence()
    flags = []
    if div_max > DIV_TOL:
        flags.append(f"divergence residual {div_max:.3e} exceeds {DIV_TOL:.0e}")
    return {"h4_sum": h4_sum, "linf_max": linf_max, "us_h4": us_h4,
            "div_max": div_max, "div_ok": div_max <= DIV_TOL, "flags": flags}


class BrownianDriver:
    """Seeded N(0, dt) increments per mode and step, stateless between calls.

    Every step uses a fresh counter-based generator keyed on (seed, step),
    so any consumer asking for the same (seed, dt, step) gets bitwise
    identical increments.  That is the whole coupling mechanism: two
    models on the same path just hold drivers with equal seeds.
    """

    def __init__(self, seed: int, dt: float, n_modes: int):
        if dt <= 0:
            raise ValueError("dt must be positive")
        if n_modes < 0:
            raise ValueError("n_modes must be nonnegative")
        self.seed = int(seed)
        self.dt = float(dt)
        self.n_modes = int(n_modes)
        self._sqrt_dt = np.sqrt(self.dt)

    def increments(self, step_index: int) -> np.ndarray:
        """Vector of n_modes increments for the given step."""
        if step_index < 0:
            raise ValueError("step_index must be nonnegative")
        bits = np.random.Philox(key=self.seed, counter=[0, 0, 0, step_index])
        gen = np.random.Generator(bits)
        return gen.standard_normal(self.n_modes) * self._sqrt_dt


def sample_increments(driver: BrownianDriver, step_index: int) -> np.ndarray:
    return driver.increments(step_index)

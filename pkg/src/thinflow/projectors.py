"""Spectral projectors and kernel filters.

Three families of operators live here:

* the anisotropy-weighted Leray projector, which removes gradients taken
  with the rescaled operator (d_x, d_y, d_z/eps^2) and returns a field
  with exactly zero 3D divergence;
* the barotropic/baroclinic splitting (vertical-average part A, its
  complement R) and the hydrostatic projector P that applies a 2D Leray
  step to the barotropic plane only;
* smoothing kernels acting as radial Fourier multipliers, used to
  regularize the vertical-velocity diffusion, together with the
  divergence-form operator sum_k div(phi_k K^2 (phi_k . grad w)) they
  induce.

All operators act on spectral coefficients with layout (..., kx, ky, m)
and have purely real multiplier symbols, so conjugate symmetry (hence
realness of fields) is preserved automatically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid
from .noise import NoiseModel

KERNEL_KINDS = ("raised_cosine", "gaussian", "identity", "zero")


@dataclass(frozen=True)
class KernelK:
    """Radial low-pass multiplier m(|k|) in [0, 1].

    kinds:
      raised_cosine  1 below |k| = cutoff, cosine rolloff to exactly 0
                     at |k| = 2*cutoff and beyond
      gaussian       exp(-|k|^2 / (2 cutoff^2))
      identity       1 everywhere
      zero           0 everywhere (disables whatever the kernel feeds)

    m(0) = 1 for every kind except zero.
    """

    kind: str = "identity"
    cutoff: float = 4.0

    def __post_init__(self):
        if self.kind not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kind!r}, expected one of {KERNEL_KINDS}")
        if self.kind in ("raised_cosine", "gaussian") and self.cutoff <= 0:
            raise ValueError("cutoff must be positive")

    def _symbol(self, grid: Grid) -> np.ndarray:
        if self.kind == "identity":
            return np.ones(grid.kshape)
        if self.kind == "zero":
            return np.zeros(grid.kshape)
        if self.kind == "gaussian":
            return np.exp(-grid.k2 / (2.0 * self.cutoff ** 2))
        kmag = np.sqrt(grid.k2)
        cut = self.cutoff
        ramp = 0.5 * (1.0 + np.cos(np.pi * (kmag - cut) / cut))
        return np.where(kmag <= cut, 1.0, np.where(kmag >= 2.0 * cut, 0.0, ramp))

    def multiplier(self, grid: Grid) -> np.ndarray:
        m = self._symbol(grid)
        # smoothing budget: m(k) (1+|k|^2)^{3/2} must stay summable
        assert np.isfinite(self.h3_sum(grid))
        return m

    def h3_sum(self, grid: Grid) -> float:
        """sum over retained wavenumbers of m(k) (1+|k|^2)^{3/2}."""
        weight = (1.0 + grid.k2) ** 1.5
        return float(np.sum(self._symbol(grid) * weight * grid.dealias_mask))


def apply_K(grid: Grid, kernel: KernelK, c: np.ndarray) -> np.ndarray:
    """Multiply spectral coefficients by the kernel symbol."""
    return c * kernel.multiplier(grid)


def apply_Ialpha(u: np.ndarray, alpha: float) -> np.ndarray:
    """Diag(1, 1, alpha): scale only the vertical component."""
    if u.shape[0] != 3:
        raise ValueError("expected a 3-component field")
    out = u.copy()
    out[2] *= alpha
    return out


def apply_IK(grid: Grid, kernel: KernelK, u: np.ndarray) -> np.ndarray:
    """Diag(Id, Id, K): kernel-filter only the vertical component."""
    if u.shape[0] != 3:
        raise ValueError("expected a 3-component field")
    out = u.copy()
    out[2] = out[2] * kernel.multiplier(grid)
    return out


# --------------------------------------------------------- Leray projectors


def project_Peps(grid: Grid, u: np.ndarray, eps: float) -> np.ndarray:
    """Anisotropy-weighted Leray projection of a 3-component field.

    Solves (d_xx + d_yy + d_zz/eps^2) q = div u with zero-mean gauge and
    returns u - (d_x q, d_y q, d_z q / eps^2).  The output has exactly
    zero 3D divergence and the operator annihilates any field of the
    form (d_x f, d_y f, d_z f / eps^2).  Self-adjoint in the inner
    product weighting the vertical component by eps^2.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if u.shape[0] != 3:
        raise ValueError("expected a 3-component field")
    denom = grid.kh2 + grid.KZ ** 2 / eps ** 2
    denom = denom.copy()
    denom[0, 0, 0] = 1.0  # gauge slot, numerator forced to zero below
    q = -grid.div3(u) / denom
    q[..., 0, 0, 0] = 0.0
    return u - grid.grad_eps(q, eps)


def project_A(grid: Grid, c: np.ndarray) -> np.ndarray:
    """Barotropic part: keep only the zero vertical-mode plane."""
    out = np.zeros_like(c)
    out[..., 0] = c[..., 0]
    return out


def project_R(grid: Grid, c: np.ndarray) -> np.ndarray:
    """Baroclinic part: drop the zero vertical-mode plane."""
    out = c.copy()
    out[..., 0] = 0.0
    return out


def _leray_2d(grid: Grid, vbar: np.ndarray) -> np.ndarray:
    """2D Leray step on a z-independent horizontal plane (2, kx, ky)."""
    kh2 = grid.kh2[..., 0].copy()
    kh2[0, 0] = 1.0
    kxp, kyp = grid.KX[..., 0], grid.KY[..., 0]
    q = (kxp * vbar[0] + kyp * vbar[1]) / kh2  # (k_H . vbar) / |k_H|^2
    q[0, 0] = 0.0
    out = vbar.copy()
    out[0] -= kxp * q
    out[1] -= kyp * q
    return out


def project_P(grid: Grid, v: np.ndarray) -> np.ndarray:
    """Hydrostatic projector on a horizontal velocity: 2D Leray on the
    barotropic plane, identity on the baroclinic remainder.

    Kills z-independent horizontal gradients, leaves any purely
    baroclinic field untouched, and never increases the L2 norm.
    """
    if v.shape[0] != 2:
        raise ValueError("expected a 2-component horizontal field")
    out = v.copy()
    out[..., 0] = _leray_2d(grid, v[..., 0])
    return out


# --------------------------------------------- kernel-filtered diffusion form


def apply_aK_divergence(grid: Grid, w: np.ndarray, model: NoiseModel,
                        kernel: KernelK) -> np.ndarray:
    """sum_k div(phi_k K^2 (phi_k . grad w)) for a scalar spectral field w.

    The quadratic form of this operator against w is -sum_k ||K(phi_k .
    grad w)||^2, so it only ever drains energy.  With the identity
    kernel it reduces to div(a grad w) for the variance tensor a; with
    the zero kernel it vanishes.
    """
    if kernel.kind == "zero" or model.n_modes == 0:
        return np.zeros_like(w)
    grad_w = grid.to_physical(grid.grad3(w))  # (3, nx, ny, nz)
    nk = model.n_modes
    dots = np.einsum("kjn,jn->kn", model.phi.reshape(nk, 3, -1),
                     grad_w.reshape(3, -1))
    dots = dots.reshape((nk,) + grad_w.shape[1:])
    if kernel.kind != "identity":
        m2 = kernel.multiplier(grid) ** 2
        dots = grid.to_physical(grid.to_spectral(dots) * m2)
    flux = np.einsum("kjn,kn->jn", model.phi.reshape(nk, 3, -1),
                     dots.reshape(nk, -1))
    flux = flux.reshape(grad_w.shape)
    return grid.div3(grid.to_spectral(flux))

"""Spectral core for the thin periodic channel S = T^2 x T.

Domain and conventions
----------------------
Physical coordinates: x, y in [0, 2*pi), z in [-1, 1).  The vertical axis is
treated as a torus of period 2, so vertical wavenumbers are integer multiples
of pi.  Physical arrays are real float64 with shape (..., nx, ny, nz).

Spectral representation: a field f is stored through its Fourier-series
coefficients, f(x) = sum_k c_k exp(i k.x), computed with a real FFT over the
x axis, so spectral arrays are complex128 with shape (..., nx//2 + 1, ny, nz).
Axis -3 holds kx = 0..nx/2, axes -2/-1 hold signed ky and m (kz = pi*m) in
FFT order.  Reality of physical fields is enforced by the representation
itself: every operator here has a real-operator symbol, so Hermitian symmetry
survives all operations by construction.

Norms are evaluated in spectral space via Parseval with the half-spectrum
weights (2 on 0 < kx < nx/2, else 1) and the true domain volume |S| = 8 pi^2,
so ||f||^2 = integral of |f|^2 over S.

Differentiation is exact (multiplication by i k); the 2/3-rule dealias mask
must be applied to every pointwise product computed in physical space.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as _fft

VOLUME = 8.0 * np.pi**2

NORM_KINDS = ("L2", "Leps", "V", "Veps", "DA", "DAeps", "DA32")

# norm kinds that weight the vertical component by eps and need a 3-vector
EPS_KINDS = ("Leps", "Veps", "DAeps")


@dataclass(frozen=True)
class Grid:
    """Fixed-domain pseudo-spectral grid with cached wavenumber machinery."""

    nx: int
    ny: int
    nz: int
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            n = getattr(self, name)
            if n < 4 or n % 2 != 0:
                raise ValueError(f"{name}={n}: grid sizes must be even and >= 4")
        if not 0.0 < self.dealias_fraction <= 1.0:
            raise ValueError(f"dealias_fraction must be in (0, 1], got {self.dealias_fraction}")

    # ------------------------------------------------------------ coordinates

    @cached_property
    def x(self) -> np.ndarray:
        return np.arange(self.nx) * (2.0 * np.pi / self.nx)

    @cached_property
    def y(self) -> np.ndarray:
        return np.arange(self.ny) * (2.0 * np.pi / self.ny)

    @cached_property
    def z(self) -> np.ndarray:
        return -1.0 + np.arange(self.nz) * (2.0 / self.nz)

    def meshgrid(self):
        """Physical coordinate arrays X, Y, Z, each shaped (nx, ny, nz)."""
        return np.meshgrid(self.x, self.y, self.z, indexing="ij")

    @property
    def npts(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def kshape(self) -> tuple:
        return (self.nx // 2 + 1, self.ny, self.nz)

    # ------------------------------------------------------------ wavenumbers

    @cached_property
    def kx(self) -> np.ndarray:
        return np.arange(self.nx // 2 + 1, dtype=np.float64)

    @cached_property
    def ky(self) -> np.ndarray:
        return np.fft.fftfreq(self.ny, d=1.0 / self.ny)

    @cached_property
    def mz(self) -> np.ndarray:
        """Signed vertical mode indices m in FFT order (kz = pi*m)."""
        return np.fft.fftfreq(self.nz, d=1.0 / self.nz)

    @cached_property
    def kz(self) -> np.ndarray:
        return np.pi * self.mz

    @cached_property
    def KX(self) -> np.ndarray:
        return self.kx[:, None, None]

    @cached_property
    def KY(self) -> np.ndarray:
        return self.ky[None, :, None]

    @cached_property
    def KZ(self) -> np.ndarray:
        return self.kz[None, None, :]

    @cached_property
    def k2(self) -> np.ndarray:
        """|k|^2 = kx^2 + ky^2 + (pi*m)^2, shape kshape."""
        return (self.KX**2 + self.KY**2 + self.KZ**2).astype(np.float64)

    @cached_property
    def kh2(self) -> np.ndarray:
        return (self.KX**2 + self.KY**2).astype(np.float64)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask (True = keep); Nyquist planes always dropped."""

        def axis_keep(idx, n):
            limit = int(self.dealias_fraction * (n // 2) + 1e-12)
            limit = min(limit, n // 2 - 1)
            return np.abs(idx) <= limit

        mx = axis_keep(self.kx, self.nx)
        my = axis_keep(self.ky, self.ny)
        mzk = axis_keep(self.mz, self.nz)
        return mx[:, None, None] & my[None, :, None] & mzk[None, None, :]

    @cached_property
    def parseval_weight(self) -> np.ndarray:
        """Multiplicity of each stored kx coefficient (2 except kx=0, nx/2)."""
        w = np.full(self.nx // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        return w[:, None, None]

    # ------------------------------------------------------------- transforms

    def to_spectral(self, f: np.ndarray) -> np.ndarray:
        """Physical (..., nx, ny, nz) -> Fourier coefficients (..., nx//2+1, ny, nz)."""
        return _fft.rfftn(f, axes=(-1, -2, -3)) / self.npts

    def to_physical(self, c: np.ndarray) -> np.ndarray:
        """Inverse of to_spectral; always returns a real array."""
        return _fft.irfftn(c * self.npts, s=(self.nz, self.ny, self.nx), axes=(-1, -2, -3))

    def dealias(self, c: np.ndarray) -> np.ndarray:
        return c * self.dealias_mask

    # ------------------------------------------------------------ derivatives

    def dx(self, c: np.ndarray) -> np.ndarray:
        return 1j * self.KX * c

    def dy(self, c: np.ndarray) -> np.ndarray:
        return 1j * self.KY * c

    def dz(self, c: np.ndarray) -> np.ndarray:
        return 1j * self.KZ * c

    def grad3(self, c: np.ndarray) -> np.ndarray:
        """Spectral gradient of a scalar, stacked on a new leading axis."""
        return np.stack([self.dx(c), self.dy(c), self.dz(c)])

    def grad_eps(self, c: np.ndarray, eps: float) -> np.ndarray:
        """Scaled gradient (d_x, d_y, eps^-2 d_z) of a scalar."""
        return np.stack([self.dx(c), self.dy(c), self.dz(c) / eps**2])

    def div3(self, u: np.ndarray) -> np.ndarray:
        """Divergence of a 3-component spectral field (components on axis 0)."""
        return 1j * (self.KX * u[0] + self.KY * u[1] + self.KZ * u[2])

    def div_h(self, v: np.ndarray) -> np.ndarray:
        return 1j * (self.KX * v[0] + self.KY * v[1])

    def laplacian(self, c: np.ndarray) -> np.ndarray:
        return -self.k2 * c

    # ------------------------------------------------------- vertical algebra

    @cached_property
    def _inv_ikz(self) -> np.ndarray:
        """1/(i kz) with the m = 0 slot zeroed (callers gauge it away)."""
        inv = np.zeros(self.nz, dtype=np.complex128)
        inv[1:] = 1.0 / (1j * self.kz[1:])
        return inv[None, None, :]

    @cached_property
    def _deposit(self) -> np.ndarray:
        """z = 1 evaluation coefficients 1/(i pi m), m != 0.

        The FFT's vertical basis is e^{i pi m (z+1)} because the z axis starts
        at -1, so evaluating a stored mode at z = 1 gives e^{2 pi i m} = 1.
        """
        dep = np.zeros(self.nz, dtype=np.complex128)
        dep[1:] = 1.0 / (1j * self.kz[1:])
        return dep

    def integrate_up(self, c: np.ndarray) -> np.ndarray:
        """Vertical antiderivative I(z) = int_z^1 c dz' for zero-z-mean input.

        The m = 0 plane of the input is ignored (it has no periodic
        antiderivative); the output's m = 0 plane carries the deposit
        sum_{m != 0} c_m / (i pi m) so that I(z=1) = 0 exactly.
        """
        out = -c * self._inv_ikz
        out[..., 0] = np.tensordot(c, self._deposit, axes=([-1], [0]))
        return out

    def vertical_average(self, c: np.ndarray) -> np.ndarray:
        """Keep only the m = 0 plane (the z-average, broadcast over z)."""
        out = np.zeros_like(c)
        out[..., 0] = c[..., 0]
        return out

    # ------------------------------------------------------------------ norms

    def _sq(self, c: np.ndarray, mult=None) -> float:
        """VOLUME * sum of weighted |c|^2 (components summed if present)."""
        p = (c.real**2 + c.imag**2) * self.parseval_weight
        if mult is not None:
            p = p * mult
        return VOLUME * float(p.sum())

    def sq_l2(self, c: np.ndarray) -> float:
        return self._sq(c)

    def sq_grad(self, c: np.ndarray) -> float:
        return self._sq(c, self.k2)

    def sq_lap(self, c: np.ndarray) -> float:
        return self._sq(c, self.k2**2)

    def sq_lap32(self, c: np.ndarray) -> float:
        return self._sq(c, self.k2**3)

    def sq_sobolev(self, c: np.ndarray, s: float) -> float:
        return self._sq(c, (1.0 + self.k2) ** s)

    def inner_l2(self, a: np.ndarray, b: np.ndarray) -> float:
        p = (a.conj() * b).real * self.parseval_weight
        return VOLUME * float(p.sum())

    def inner_leps(self, u: np.ndarray, up: np.ndarray, eps: float) -> float:
        """(u, u')_{L^2_eps} = (v, v') + eps^2 (w, w') for 3-vectors."""
        return (
            self.inner_l2(u[0], up[0])
            + self.inner_l2(u[1], up[1])
            + eps**2 * self.inner_l2(u[2], up[2])
        )

    def integral(self, c: np.ndarray) -> float:
        """Integral of the field over S (volume times the mean mode)."""
        return VOLUME * float(c[..., 0, 0, 0].real.sum())

    def norm_sq(self, c: np.ndarray, kind: str, eps: float | None = None) -> float:
        """Squared norm of a spectral field under one of NORM_KINDS.

        Components ride on a leading axis.  The eps-weighted kinds require a
        3-component field ordered (v1, v2, w) and an eps value; plain kinds
        sum over whatever components are present.
        """
        if kind not in NORM_KINDS:
            raise ValueError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")
        if kind in EPS_KINDS:
            if eps is None:
                raise ValueError(f"norm kind {kind!r} requires eps")
            if c.ndim != 4 or c.shape[0] != 3:
                raise ValueError(f"norm kind {kind!r} requires a 3-component field")
            v, w = c[:2], c[2]
            if kind == "Leps":
                return self.sq_l2(v) + eps**2 * self.sq_l2(w)
            if kind == "Veps":
                return self.sq_grad(v) + eps**2 * (self.sq_l2(w) + self.sq_grad(w))
            return self.sq_lap(v) + eps**2 * self.sq_lap(w)
        if kind == "L2":
            return self.sq_l2(c)
        if kind == "V":
            return self.sq_grad(c)
        if kind == "DA":
            return self.sq_lap(c)
        return self.sq_lap32(c)

    def norm(self, c: np.ndarray, kind: str, eps: float | None = None) -> float:
        return float(np.sqrt(self.norm_sq(c, kind, eps)))


@dataclass(frozen=True)
class SpectralField:
    """A field (scalar or multi-component) in spectral representation."""

    grid: Grid
    coeffs: np.ndarray

    @classmethod
    def from_physical(cls, grid: Grid, values: np.ndarray) -> "SpectralField":
        return cls(grid, grid.to_spectral(np.asarray(values, dtype=np.float64)))

    def to_physical(self) -> np.ndarray:
        return self.grid.to_physical(self.coeffs)

    @property
    def ncomp(self) -> int:
        return 1 if self.coeffs.ndim == 3 else self.coeffs.shape[0]

    def norm(self, kind: str, eps: float | None = None) -> float:
        return self.grid.norm(self.coeffs, kind, eps)

    def __add__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralField") -> "SpectralField":
        return SpectralField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "SpectralField":
        return SpectralField(self.grid, self.coeffs * scalar)

    __rmul__ = __mul__

"""Pointwise contraction kernels for the pseudo-spectral right-hand sides.

These are the only hot loops that are not FFTs: advection dots u*.grad(f),
per-mode transport dots phi_k.grad(f), and variance-tensor contractions
a.grad(f).  Each has a numba @njit implementation and a pure-numpy einsum
fallback.  Selection: numba is used when importable unless the environment
variable THINFLOW_NUMBA is set to "0".

Both paths are deterministic; they differ from each other in floating-point
association order, so bitwise reproducibility holds per path, not across.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("THINFLOW_NUMBA", "1") != "0"


# ---------------------------------------------------------------- numpy path


def advect_numpy(flow: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """sum_j flow[j] * grads[c, j] -> out[c].  flow (3,N), grads (C,3,N)."""
    return np.einsum("jn,cjn->cn", flow, grads)


def mode_dots_numpy(phi: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """sum_j phi[k, j] * grads[c, j] -> out[k, c].  phi (K,3,N), grads (C,3,N)."""
    return np.einsum("kjn,cjn->kcn", phi, grads)


def tensor_contract_numpy(a: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """sum_j a[i, j] * grads[c, j] -> out[c, i].  a (D,D,N), grads (C,D,N)."""
    return np.einsum("ijn,cjn->cin", a, grads)


# ---------------------------------------------------------------- numba path

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _advect_nb(flow, grads):
        c, d, n = grads.shape
        out = np.zeros((c, n))
        for ci in range(c):
            for j in range(d):
                for i in range(n):
                    out[ci, i] += flow[j, i] * grads[ci, j, i]
        return out

    @numba.njit(cache=True)
    def _mode_dots_nb(phi, grads):
        k, d, n = phi.shape
        c = grads.shape[0]
        out = np.zeros((k, c, n))
        for ki in range(k):
            for ci in range(c):
                for j in range(d):
                    for i in range(n):
                        out[ki, ci, i] += phi[ki, j, i] * grads[ci, j, i]
        return out

    @numba.njit(cache=True)
    def _tensor_contract_nb(a, grads):
        d, _, n = a.shape
        c = grads.shape[0]
        out = np.zeros((c, d, n))
        for ci in range(c):
            for ii in range(d):
                for j in range(d):
                    for i in range(n):
                        out[ci, ii, i] += a[ii, j, i] * grads[ci, j, i]
        return out

    def advect_numba(flow, grads):
        return _advect_nb(np.ascontiguousarray(flow), np.ascontiguousarray(grads))

    def mode_dots_numba(phi, grads):
        return _mode_dots_nb(np.ascontiguousarray(phi), np.ascontiguousarray(grads))

    def tensor_contract_numba(a, grads):
        return _tensor_contract_nb(np.ascontiguousarray(a), np.ascontiguousarray(grads))


if USE_NUMBA:
    advect = advect_numba
    mode_dots = mode_dots_numba
    tensor_contract = tensor_contract_numba
else:
    advect = advect_numpy
    mode_dots = mode_dots_numpy
    tensor_contract = tensor_contract_numpy

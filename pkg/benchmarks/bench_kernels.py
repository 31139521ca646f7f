"""Timing for the pointwise contraction kernels: numba njit loops against
the numpy einsum fallbacks, on production-shaped arrays (32x32x16 grid,
16 noise modes, 4 advected components).

Usage: python benchmarks/bench_kernels.py [repeats]

Times are best-of-repeats per call.  The numba path gets a warmup call
first so JIT compilation is not included.  Both implementations are
imported directly, so the THINFLOW_NUMBA switch does not matter here.
"""

import sys
import time

import numpy as np

from thinflow import kernels

NX, NY, NZ = 32, 32, 16
N = NX * NY * NZ
K_MODES = 16
N_COMP = 4


def best_of(fn, args, repeats):
    out = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        out = min(out, time.perf_counter() - t0)
    return out


def main(argv):
    repeats = int(argv[1]) if len(argv) > 1 else 20
    rng = np.random.default_rng(0)
    flow = rng.standard_normal((3, N))
    grads = rng.standard_normal((N_COMP, 3, N))
    phi = rng.standard_normal((K_MODES, 3, N))
    a = rng.standard_normal((3, 3, N))
    a = a + a.transpose(1, 0, 2)  # the variance tensor is symmetric

    cases = [
        ("advect", kernels.advect_numpy, (flow, grads)),
        ("mode_dots", kernels.mode_dots_numpy, (phi, grads)),
        ("tensor_contract", kernels.tensor_contract_numpy, (a, grads)),
    ]

    print(f"arrays: N={N} points, K={K_MODES} modes, C={N_COMP} components, "
          f"best of {repeats}")
    if not kernels.HAVE_NUMBA:
        print("numba not importable; timing the numpy fallback only")

    for name, np_fn, args in cases:
        t_np = best_of(np_fn, args, repeats)
        line = f"{name:16s} numpy {t_np * 1e3:8.3f} ms"
        if kernels.HAVE_NUMBA:
            nb_fn = getattr(kernels, f"{name}_numba")
            ref = np_fn(*args)
            got = nb_fn(*args)  # warmup; also checks agreement
            err = np.max(np.abs(got - ref)) / max(np.max(np.abs(ref)), 1e-300)
            t_nb = best_of(nb_fn, args, repeats)
            line += (f"   numba {t_nb * 1e3:8.3f} ms   "
                     f"speedup {t_np / t_nb:5.2f}x   rel dev {err:.1e}")
        print(line)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))

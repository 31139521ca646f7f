import numpy as np
import pytest

from thinflow.grid import Grid

# one verdict line per acceptance test, echoed after the run so the
# measured numbers are visible even when everything passes
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance summary")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def grid():
    return Grid(16, 16, 8)


@pytest.fixture
def grid32():
    return Grid(32, 32, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_smooth_scalar(grid: Grid, rng, kmax: int = 3, ncomp: int | None = None):
    """Random band-limited real field, returned in spectral representation."""
    shape = grid.kshape if ncomp is None else (ncomp, *grid.kshape)
    phys_shape = (grid.nx, grid.ny, grid.nz) if ncomp is None else (ncomp, grid.nx, grid.ny, grid.nz)
    c = grid.to_spectral(rng.standard_normal(phys_shape))
    keep = (np.abs(grid.KX) <= kmax) & (np.abs(grid.KY) <= kmax) & (np.abs(grid.mz)[None, None, :] <= kmax)
    out = np.zeros(shape, dtype=np.complex128)
    out[..., :, :, :] = c * keep
    return grid.dealias(out)

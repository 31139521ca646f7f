"""Pseudo-spectral solver and convergence harness for stochastic thin-domain flows."""

from thinflow.config import (
    ConfigError,
    RunConfig,
    SweepConfig,
    config_hash,
    load_config,
    parse_config,
    serialize_config,
)
from thinflow.diagnostics import (
    RateFit,
    compute_E0,
    compute_E1,
    compute_E14,
    energy_residual,
    fit_rate,
    moment_path_value,
)
from thinflow.dynamics import (
    ModelVariant,
    PhysicalConstants,
    PreparedModel,
    State,
    vertical_velocity,
)
from thinflow.grid import Grid, SpectralField
from thinflow.harness import (
    build_grid,
    build_initial,
    build_noise,
    run_cell,
    run_coupled,
    run_single,
    run_sweep,
)
from thinflow.integrator import (
    BrownianDriver,
    CoupledResult,
    RunResult,
    StepperConfig,
    integrate,
    integrate_coupled,
    integrate_ensemble,
)
from thinflow.noise import (
    ModeSpec,
    NoiseModel,
    make_mode_bank,
    scale_noise_map,
)
from thinflow.projectors import (
    KernelK,
    project_A,
    project_P,
    project_Peps,
    project_R,
)

__version__ = "0.1.0"

__all__ = [
    "BrownianDriver",
    "ConfigError",
    "CoupledResult",
    "Grid",
    "KernelK",
    "ModeSpec",
    "ModelVariant",
    "NoiseModel",
    "PhysicalConstants",
    "PreparedModel",
    "RateFit",
    "RunConfig",
    "RunResult",
    "SpectralField",
    "State",
    "StepperConfig",
    "SweepConfig",
    "build_grid",
    "build_initial",
    "build_noise",
    "compute_E0",
    "compute_E1",
    "compute_E14",
    "config_hash",
    "energy_residual",
    "fit_rate",
    "integrate",
    "integrate_coupled",
    "integrate_ensemble",
    "load_config",
    "make_mode_bank",
    "moment_path_value",
    "parse_config",
    "project_A",
    "project_P",
    "project_Peps",
    "project_R",
    "run_cell",
    "run_coupled",
    "run_single",
    "run_sweep",
    "scale_noise_map",
    "serialize_config",
    "vertical_velocity",
    "__version__",
]

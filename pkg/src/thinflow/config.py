"""Experiment configuration: a small TOML schema, strict parsing with
unknown-key rejection, a matching emitter, and content hashing for sweep
resumability.

Layout (all sections optional, every field defaulted):

    seed = 0
    [grid]     nx, ny, nz
    [model]    variant, eps, alpha_sigma   with [model.kernel] kind, cutoff
    [noise]    upsilon, mode_count, amplitude, max_wave, bank_seed,
               vertical_coupling,
               plus optional [[noise.modes]] tables (kx, ky, amplitude,
               phase, zmult, z_phase, amp_z) that replace the generated bank
    [physics]  rho0, g
    [stepper]  dt, t_end, record_stride, blowup_threshold
    [initial_condition]  kind (taylor_green_like | random_smooth | file),
               amplitude, theta_amplitude, spectrum_slope, path, ic_seed

A [sweep] section turns the file into a sweep: eps_list, paths_per_cell,
[sweep.alpha_rule] (kind = "fixed" | "power", gamma), and the two compared
models as [sweep.model_a] / [sweep.model_b] (variant plus kernel; eps and
alpha_sigma come from the cell).

vertical_coupling sets the strength of the vertical noise components that
non-hydrostatic lanes carry: each bank mode gains an independent companion
channel holding a z-independent vertical part amp_z = vertical_coupling *
eps * amplitude, the residual a thin-domain rescaling leaves on the momentum
carrier.  Hydrostatic lanes keep the planar bank (their companion channels
are zero fields, present only to share the increment layout), so a coupled
pair differs by an independent noise perturbation of joint size ~ eps.  Set
it to 0 to run both lanes on identical planar banks.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dynamics import VARIANT_TAGS
from .projectors import KERNEL_KINDS

IC_KINDS = ("taylor_green_like", "random_smooth", "file")
ALPHA_RULES = ("fixed", "power")


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------------ schema

@dataclass(frozen=True)
class GridConfig:
    nx: int = 32
    ny: int = 32
    nz: int = 16


@dataclass(frozen=True)
class KernelConfig:
    kind: str = "raised_cosine"
    cutoff: float = 4.0


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "ns_reg"
    eps: float = 0.1
    alpha_sigma: float = 1.0
    kernel: KernelConfig = field(default_factory=KernelConfig)


@dataclass(frozen=True)
class NoiseModeConfig:
    kx: int = 1
    ky: int = 0
    amplitude: float = 1.0
    phase: float = 0.0
    zmult: float = 0.0
    z_phase: float = 0.0
    amp_z: float = 0.0


@dataclass(frozen=True)
class NoiseConfig:
    upsilon: float = 1.0
    mode_count: int = 8
    amplitude: float = 0.05
    max_wave: int = 2
    bank_seed: int = 0
    vertical_coupling: float = 0.5
    modes: tuple = ()


@dataclass(frozen=True)
class PhysicsConfig:
    rho0: float = 1000.0
    g: float = 9.81


@dataclass(frozen=True)
class StepperSection:
    dt: float = 2.5e-3
    t_end: float = 0.5
    record_stride: int = 1
    blowup_threshold: float = 1e3


@dataclass(frozen=True)
class InitialConditionConfig:
    kind: str = "taylor_green_like"
    amplitude: float = 0.3
    theta_amplitude: float = 0.05
    spectrum_slope: float = 2.0
    path: str = ""
    ic_seed: int = 1


@dataclass(frozen=True)
class RunConfig:
    grid: GridConfig = field(default_factory=GridConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    stepper: StepperSection = field(default_factory=StepperSection)
    initial_condition: InitialConditionConfig = field(
        default_factory=InitialConditionConfig)
    seed: int = 0


@dataclass(frozen=True)
class PairedModelConfig:
    variant: str = "ns"
    kernel: KernelConfig = field(default_factory=KernelConfig)


@dataclass(frozen=True)
class AlphaRule:
    kind: str = "fixed"
    gamma: float = 0.0


@dataclass(frozen=True)
class SweepConfig:
    base: RunConfig = field(default_factory=RunConfig)
    eps_list: tuple = (0.2, 0.1, 0.05, 0.025)
    alpha_rule: AlphaRule = field(default_factory=AlphaRule)
    paths_per_cell: int = 20
    model_a: PairedModelConfig = field(
        default_factory=lambda: PairedModelConfig("ns_reg"))
    model_b: PairedModelConfig = field(
        default_factory=lambda: PairedModelConfig("pe_weak"))

    def alpha_for(self, eps: float) -> float:
        if self.alpha_rule.kind == "power":
            return float(eps) ** (-self.alpha_rule.gamma)
        return self.base.model.alpha_sigma


# -------------------------------------------------------------- validation

def _require(cond, fieldname, message):
    if not cond:
        raise ConfigError(f"{fieldname}: {message}")


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x):
    return (_is_int(x) or isinstance(x, float)) and not isinstance(x, bool)


def validate_run_config(cfg: RunConfig) -> RunConfig:
    g = cfg.grid
    for name, val in (("grid.nx", g.nx), ("grid.ny", g.ny), ("grid.nz", g.nz)):
        _require(_is_int(val) and val >= 4 and val % 2 == 0, name,
                 "must be an even integer of at least 4")
    m = cfg.model
    _require(m.variant in VARIANT_TAGS, "model.variant",
             f"must be one of {VARIANT_TAGS}")
    _require(_is_num(m.eps) and 0.0 < m.eps <= 1.0, "model.eps",
             "must lie in (0, 1]")
    _require(_is_num(m.alpha_sigma) and m.alpha_sigma >= 0.0,
             "model.alpha_sigma", "must be nonnegative")
    _require(m.kernel.kind in KERNEL_KINDS, "model.kernel.kind",
             f"must be one of {KERNEL_KINDS}")
    _require(_is_num(m.kernel.cutoff) and m.kernel.cutoff > 0,
             "model.kernel.cutoff", "must be positive")
    n = cfg.noise
    _require(_is_num(n.upsilon) and n.upsilon >= 0.0, "noise.upsilon",
             "must be nonnegative")
    _require(_is_int(n.mode_count) and n.mode_count >= 0, "noise.mode_count",
             "must be a nonnegative integer")
    _require(_is_num(n.amplitude) and n.amplitude >= 0.0, "noise.amplitude",
             "must be nonnegative")
    _require(_is_int(n.max_wave) and n.max_wave >= 1, "noise.max_wave",
             "must be a positive integer")
    _require(_is_num(n.vertical_coupling) and n.vertical_coupling >= 0.0,
             "noise.vertical_coupling", "must be a nonnegative number")
    _require(_is_int(n.bank_seed) and n.bank_seed >= 0, "noise.bank_seed",
             "must be a nonnegative integer")
    for i, mode in enumerate(n.modes):
        _require(_is_int(mode.kx) and _is_int(mode.ky),
                 f"noise.modes[{i}]", "kx and ky must be integers")
        _require(float(mode.zmult).is_integer(), f"noise.modes[{i}].zmult",
                 "must be an integer to fit the periodic layer")
    p = cfg.physics
    _require(_is_num(p.rho0) and p.rho0 > 0, "physics.rho0", "must be positive")
    _require(_is_num(p.g) and p.g >= 0, "physics.g", "must be nonnegative")
    s = cfg.stepper
    _require(_is_num(s.dt) and s.dt > 0, "stepper.dt", "must be positive")
    _require(_is_num(s.t_end) and s.t_end >= s.dt, "stepper.t_end",
             "must cover at least one step")
    _require(_is_int(s.record_stride) and s.record_stride >= 1,
             "stepper.record_stride", "must be a positive integer")
    _require(_is_num(s.blowup_threshold) and s.blowup_threshold > 0,
             "stepper.blowup_threshold", "must be positive")
    ic = cfg.initial_condition
    _require(ic.kind in IC_KINDS, "initial_condition.kind",
             f"must be one of {IC_KINDS}")
    _require(_is_num(ic.amplitude) and ic.amplitude >= 0,
             "initial_condition.amplitude", "must be nonnegative")
    _require(_is_num(ic.theta_amplitude) and ic.theta_amplitude >= 0,
             "initial_condition.theta_amplitude", "must be nonnegative")
    _require(_is_num(ic.spectrum_slope), "initial_condition.spectrum_slope",
             "must be a number")
    if ic.kind == "file":
        _require(bool(ic.path), "initial_condition.path",
                 "required when kind = \"file\"")
    _require(_is_int(ic.ic_seed) and ic.ic_seed >= 0,
             "initial_condition.ic_seed", "must be a nonnegative integer")
    _require(_is_int(cfg.seed) and cfg.seed >= 0, "seed",
             "must be a nonnegative integer")
    return cfg


def validate_sweep_config(cfg: SweepConfig) -> SweepConfig:
    validate_run_config(cfg.base)
    el = cfg.eps_list
    _require(len(el) >= 3, "sweep.eps_list", "needs at least three entries")
    for i, e in enumerate(el):
        _require(_is_num(e) and 0.0 < e <= 1.0, f"sweep.eps_list[{i}]",
                 "must lie in (0, 1]")
    _require(all(a > b for a, b in zip(el, el[1:])), "sweep.eps_list",
             "must be strictly decreasing")
    _require(cfg.alpha_rule.kind in ALPHA_RULES, "sweep.alpha_rule.kind",
             f"must be one of {ALPHA_RULES}")
    _require(_is_num(cfg.alpha_rule.gamma) and cfg.alpha_rule.gamma >= 0.0,
             "sweep.alpha_rule.gamma", "must be nonnegative")
    _require(_is_int(cfg.paths_per_cell) and cfg.paths_per_cell >= 1,
             "sweep.paths_per_cell", "must be a positive integer")
    for side, pm in (("a", cfg.model_a), ("b", cfg.model_b)):
        _require(pm.variant in VARIANT_TAGS, f"sweep.model_{side}.variant",
                 f"must be one of {VARIANT_TAGS}")
        _require(pm.kernel.kind in KERNEL_KINDS,
                 f"sweep.model_{side}.kernel.kind",
                 f"must be one of {KERNEL_KINDS}")
        _require(_is_num(pm.kernel.cutoff) and pm.kernel.cutoff > 0,
                 f"sweep.model_{side}.kernel.cutoff", "must be positive")
    _require(not (cfg.model_a.variant.startswith("pe")
                  and cfg.model_b.variant.startswith("pe")),
             "sweep.model_b.variant",
             "cannot pair two hydrostatic models; one side must be ns-type")
    return cfg


# ----------------------------------------------------------------- parsing

def _take_section(data: dict, prefix: str, builders: dict, ctx: str) -> dict:
    """Pull known keys out of a raw table, rejecting anything else."""
    unknown = set(data) - set(builders)
    if unknown:
        name = sorted(unknown)[0]
        raise ConfigError(f"unknown key '{ctx}{name}'")
    out = {}
    for key, build in builders.items():
        if key in data:
            out[key] = build(data[key])
    return out


def _scalar(x):
    return x


def _kernel(data) -> KernelConfig:
    if not isinstance(data, dict):
        raise ConfigError("kernel: expected a table")
    kw = _take_section(data, "kernel.", {"kind": _scalar, "cutoff": float},
                       "kernel.")
    return KernelConfig(**kw)


def _model(data) -> ModelConfig:
    kw = _take_section(data, "model.", {
        "variant": _scalar, "eps": float, "alpha_sigma": float,
        "kernel": _kernel}, "model.")
    return ModelConfig(**kw)


def _noise_mode(data) -> NoiseModeConfig:
    kw = _take_section(data, "noise.modes.", {
        "kx": _scalar, "ky": _scalar, "amplitude": float, "phase": float,
        "zmult": float, "z_phase": float, "amp_z": float}, "noise.modes.")
    return NoiseModeConfig(**kw)


def _noise(data) -> NoiseConfig:
    kw = _take_section(data, "noise.", {
        "upsilon": float, "mode_count": _scalar, "amplitude": float,
        "max_wave": _scalar, "bank_seed": _scalar, "vertical_coupling": float,
        "modes": lambda lst: tuple(_noise_mode(m) for m in lst)}, "noise.")
    return NoiseConfig(**kw)


def _run_config(data: dict) -> RunConfig:
    kw = _take_section(data, "", {
        "grid": lambda d: GridConfig(**_take_section(
            d, "grid.", {"nx": _scalar, "ny": _scalar, "nz": _scalar}, "grid.")),
        "model": _model,
        "noise": _noise,
        "physics": lambda d: PhysicsConfig(**_take_section(
            d, "physics.", {"rho0": float, "g": float}, "physics.")),
        "stepper": lambda d: StepperSection(**_take_section(
            d, "stepper.", {"dt": float, "t_end": float,
                            "record_stride": _scalar,
                            "blowup_threshold": float}, "stepper.")),
        "initial_condition": lambda d: InitialConditionConfig(**_take_section(
            d, "initial_condition.", {
                "kind": _scalar, "amplitude": float, "theta_amplitude": float,
                "spectrum_slope": float, "path": _scalar,
                "ic_seed": _scalar}, "initial_condition.")),
        "seed": _scalar,
    }, "")
    return RunConfig(**kw)


def _paired_model(data, side: str) -> PairedModelConfig:
    kw = _take_section(data, f"sweep.model_{side}.", {
        "variant": _scalar, "kernel": _kernel}, f"sweep.model_{side}.")
    return PairedModelConfig(**kw)


def parse_config(text: str):
    """Parse TOML text into a validated RunConfig, or a SweepConfig when a
    [sweep] section is present."""
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    sweep_raw = raw.pop("sweep", None)
    base = validate_run_config(_run_config(raw))
    if sweep_raw is None:
        return base
    kw = _take_section(sweep_raw, "sweep.", {
        "eps_list": lambda lst: tuple(float(e) for e in lst),
        "alpha_rule": lambda d: AlphaRule(**_take_section(
            d, "sweep.alpha_rule.", {"kind": _scalar, "gamma": float},
            "sweep.alpha_rule.")),
        "paths_per_cell": _scalar,
        "model_a": lambda d: _paired_model(d, "a"),
        "model_b": lambda d: _paired_model(d, "b"),
    }, "sweep.")
    return validate_sweep_config(SweepConfig(base=base, **kw))


def load_config(path: str):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------------- emission

def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot emit {type(v).__name__} as a config value")


def _emit_table(name: str, table: dict, out: list):
    scalars = {k: v for k, v in table.items()
               if not isinstance(v, dict)
               and not (isinstance(v, (list, tuple)) and v
                        and isinstance(v[0], dict))}
    subtables = {k: v for k, v in table.items() if isinstance(v, dict)}
    arrays = {k: v for k, v in table.items()
              if isinstance(v, (list, tuple)) and v and isinstance(v[0], dict)}
    if name and scalars:
        out.append(f"[{name}]")
    for k, v in scalars.items():
        out.append(f"{k} = {_toml_value(v)}")
    if name and scalars:
        out.append("")
    for k, v in subtables.items():
        _emit_table(f"{name}.{k}" if name else k, v, out)
    for k, rows in arrays.items():
        for row in rows:
            out.append(f"[[{name}.{k}]]" if name else f"[[{k}]]")
            for rk, rv in row.items():
                out.append(f"{rk} = {_toml_value(rv)}")
            out.append("")


def serialize_config(cfg) -> str:
    """Emit a config as TOML text; parse_config inverts this exactly."""
    if isinstance(cfg, SweepConfig):
        data = asdict(cfg.base)
        sweep = asdict(cfg)
        sweep.pop("base")
        sweep["eps_list"] = list(sweep["eps_list"])
        data["sweep"] = sweep
    elif isinstance(cfg, RunConfig):
        data = asdict(cfg)
    else:
        raise TypeError("expected a RunConfig or SweepConfig")
    data_noise = data["noise"]
    data_noise["modes"] = [dict(m) for m in data_noise.get("modes", [])]
    if not data_noise["modes"]:
        data_noise.pop("modes")
    out = []
    top_scalars = {k: v for k, v in data.items() if not isinstance(v, dict)}
    for k, v in top_scalars.items():
        out.append(f"{k} = {_toml_value(v)}")
    if top_scalars:
        out.append("")
    for k, v in data.items():
        if isinstance(v, dict):
            _emit_table(k, v, out)
    return "\n".join(out).rstrip() + "\n"


def config_hash(cfg) -> str:
    """Stable content hash used for sweep resumability."""
    if isinstance(cfg, (RunConfig, SweepConfig)):
        payload = asdict(cfg)
    else:
        payload = cfg
    blob = json.dumps(payload, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]

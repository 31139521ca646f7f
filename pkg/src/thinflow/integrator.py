"""Time stepping for the stochastic thin-domain models.

Exponential Euler-Maruyama: the viscous Laplacian is integrated exactly
through a spectral factor exp(-|k|^2 dt) while drift and diffusion enter
explicitly at the left endpoint (Ito).  Coupled runs hand the *same*
Brownian increments to every model each step; that is the entire
pathwise-coupling mechanism.

All recorded norm series store SQUARED norms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import PhysicalConstants, PreparedModel, State
from .noise import BrownianDriver, NoiseModel
from .projectors import project_P


# squared-norm series recorded for every run, at record_stride
SERIES_KEYS = ("v_L2", "v_V", "v_DA", "v_DA32", "th_L2", "th_V", "th_DA",
               "u_Leps", "u_Veps", "u_DAeps", "w_L2", "w_V")

# squared-norm series of the pairwise difference fields in a coupled run
DIFF_KEYS = ("U_Leps", "U_gradeps", "U_Veps", "U_DAeps",
             "TH_L2", "TH_V", "TH_DA")


@dataclass(frozen=True)
class StepperConfig:
    """Step size, horizon and safety rails for one run.

    cfl_guard is an advisory transport-stability bound on
    dt * max(|u1|/dx + |u2|/dy + |u3|/dz); exceeding it is treated like a
    blow-up (the run is truncated and flagged).  It defaults to off.
    """

    dt: float
    t_end: float
    record_stride: int = 1
    blowup_threshold: float = 1e3
    cfl_guard: float = float("inf")

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.t_end <= 0:
            raise ValueError("t_end must be positive")
        if int(self.record_stride) != self.record_stride or self.record_stride < 1:
            raise ValueError("record_stride must be a positive integer")
        if self.blowup_threshold <= 0:
            raise ValueError("blowup_threshold must be positive")
        if self.cfl_guard <= 0:
            raise ValueError("cfl_guard must be positive")
        if self.n_steps < 1:
            raise ValueError("t_end shorter than one step")

    @property
    def n_steps(self) -> int:
        # the horizon actually integrated is n_steps * dt
        return int(round(self.t_end / self.dt))


@dataclass
class RunResult:
    """One trajectory: stride-sampled squared-norm series plus a per-step
    energy ledger.

    series maps SERIES_KEYS to arrays over `times`.  ledger holds
    state-sampled arrays (time, energy, visc, stoch_diss, qv, buoy_flux;
    one row per visited state including the last) and the step-sampled
    martingale increments `mart` (one per completed step).  On blow-up
    everything is truncated at the last valid state.
    """

    times: np.ndarray
    series: dict
    ledger: dict
    final_state: State
    blew_up: bool
    blowup_time: float | None
    n_steps: int
    dt: float
    eps: float
    variant_tag: str
    seed: int

    def series_frame(self) -> dict:
        out = {"time": self.times}
        out.update(self.series)
        return out


@dataclass
class CoupledResult:
    """Runs driven by shared increments plus difference series against
    runs[0].  diffs[j] covers the pair (runs[0], runs[j+1]) and carries its
    own `times` (truncated when either member blows up)."""

    runs: list
    diffs: list

    @property
    def run_a(self) -> RunResult:
        return self.runs[0]

    @property
    def run_b(self) -> RunResult:
        return self.runs[1]

    @property
    def diff(self) -> dict:
        return self.diffs[0]

    def __iter__(self):
        # two-model calls unpack as (run_a, run_b, diff)
        yield self.runs[0]
        yield self.runs[1]
        yield self.diffs[0]


def _as_model(variant_or_model, noise, grid, constants) -> PreparedModel:
    if isinstance(variant_or_model, PreparedModel):
        if noise is not None:
            raise ValueError("pass noise=None when handing in a PreparedModel")
        return variant_or_model
    if not isinstance(noise, NoiseModel):
        raise TypeError("a ModelVariant needs an accompanying NoiseModel")
    return PreparedModel(grid, variant_or_model, noise, constants)


def _clean_initial(state: State) -> State:
    """Dealias, restore the barotropic divergence constraint and remove the
    tracer mean.  Idempotent on admissible data."""
    g = state.grid
    v = project_P(g, g.dealias(state.v))
    th = g.dealias(state.theta).copy()
    th[0, 0, 0] = 0.0
    return State(g, v, th, state.time)


class _Lane:
    """Per-model bookkeeping inside a (possibly coupled) run."""

    def __init__(self, model: PreparedModel, initial: State, stepper: StepperConfig):
        self.model = model
        self.state = initial.copy()
        g = model.grid
        # integrating factor of the viscous part over one step
        self.efac = np.exp(-g.k2 * stepper.dt)
        self.alive = True
        self.blew_up = False
        self.blowup_time: float | None = None
        self.terms: dict | None = None
        self.rec_t: list = []
        self.series = {k: [] for k in SERIES_KEYS}
        self.ledger = {k: [] for k in
                       ("time", "energy", "visc", "stoch_diss", "qv", "buoy_flux")}
        self.mart: list = []
        self.steps_taken = 0
        self.last_recorded = -1

    # ---- per-state work

    def eval_terms(self):
        self.terms = self.model.step_terms(self.state)

    def push_ledger(self):
        g = self.model.grid
        t = self.terms
        self.ledger["time"].append(self.state.time)
        self.ledger["energy"].append(0.5 * g.norm_sq(t["u"], "Leps", self.model.eps))
        for key in ("visc", "stoch_diss", "qv", "buoy_flux"):
            self.ledger[key].append(t[key])

    def record(self, index: int):
        if index == self.last_recorded:
            return
        self.last_recorded = index
        g = self.model.grid
        eps = self.model.eps
        s, u = self.state, self.terms["u"]
        self.rec_t.append(s.time)
        self.series["v_L2"].append(g.norm_sq(s.v, "L2"))
        self.series["v_V"].append(g.norm_sq(s.v, "V"))
        self.series["v_DA"].append(g.norm_sq(s.v, "DA"))
        self.series["v_DA32"].append(g.norm_sq(s.v, "DA32"))
        self.series["th_L2"].append(g.norm_sq(s.theta, "L2"))
        self.series["th_V"].append(g.norm_sq(s.theta, "V"))
        self.series["th_DA"].append(g.norm_sq(s.theta, "DA"))
        self.series["u_Leps"].append(g.norm_sq(u, "Leps", eps))
        self.series["u_Veps"].append(g.norm_sq(u, "Veps", eps))
        self.series["u_DAeps"].append(g.norm_sq(u, "DAeps", eps))
        self.series["w_L2"].append(g.sq_l2(u[2]))
        self.series["w_V"].append(g.sq_grad(u[2]))

    # ---- stepping

    def advance(self, dB: np.ndarray, stepper: StepperConfig, t_next: float) -> bool:
        """One Euler-Maruyama update.  Returns False (and freezes the lane)
        when the new state trips the blow-up surrogate."""
        g = self.model.grid
        t = self.terms
        dt = stepper.dt
        mart = 0.0
        if dB.size:
            noise_v = np.tensordot(dB, t["modes_v"], axes=(0, 0))
            noise_th = np.tensordot(dB, t["modes_th"], axes=(0, 0))
            for k in range(dB.size):
                mart += g.inner_leps(t["u"], t["modes_u3"][k], self.model.eps) * dB[k]
        else:
            noise_v = 0.0
            noise_th = 0.0
        v_new = self.efac * (self.state.v + dt * t["drift_v"] + noise_v)
        th_new = self.efac * (self.state.theta + dt * t["drift_th"] + noise_th)
        v_new = project_P(g, v_new)
        th_new[0, 0, 0] = 0.0

        finite = (np.all(np.isfinite(v_new.real)) and np.all(np.isfinite(v_new.imag))
                  and np.all(np.isfinite(th_new.real)) and np.all(np.isfinite(th_new.imag)))
        bad = not finite
        if not bad:
            vV = float(np.sqrt(g.sq_grad(v_new)))
            bad = vV > stepper.blowup_threshold
        if not bad and np.isfinite(stepper.cfl_guard):
            u_phys = g.to_physical(t["u"])
            dx = 2 * np.pi / g.nx
            dy = 2 * np.pi / g.ny
            dz = 2.0 / g.nz
            cfl = dt * float(np.max(np.abs(u_phys[0]) / dx + np.abs(u_phys[1]) / dy
                                    + np.abs(u_phys[2]) / dz))
            bad = cfl > stepper.cfl_guard
        if bad:
            self.alive = False
            self.blew_up = True
            self.blowup_time = t_next
            return False

        self.mart.append(mart)
        self.state = State(g, v_new, th_new, t_next)
        self.steps_taken += 1
        return True

    # ---- packaging

    def result(self, stepper: StepperConfig, seed: int) -> RunResult:
        series = {k: np.asarray(v) for k, v in self.series.items()}
        ledger = {k: np.asarray(v) for k, v in self.ledger.items()}
        ledger["mart"] = np.asarray(self.mart)
        return RunResult(
            times=np.asarray(self.rec_t),
            series=series,
            ledger=ledger,
            final_state=self.state,
            blew_up=self.blew_up,
            blowup_time=self.blowup_time,
            n_steps=self.steps_taken,
            dt=stepper.dt,
            eps=self.model.eps,
            variant_tag=self.model.variant.tag,
            seed=seed,
        )


def _diff_row(lane_a: _Lane, lane_b: _Lane) -> tuple:
    """Squared difference norms at the current (shared) state time."""
    g = lane_a.model.grid
    eps = lane_a.model.eps
    u_d = lane_a.terms["u"] - lane_b.terms["u"]
    th_d = lane_a.state.theta - lane_b.state.theta
    return (
        g.norm_sq(u_d, "Leps", eps),
        g.sq_grad(u_d[:2]) + eps ** 2 * g.sq_grad(u_d[2]),
        g.norm_sq(u_d, "Veps", eps),
        g.norm_sq(u_d, "DAeps", eps),
        g.sq_l2(th_d),
        g.sq_grad(th_d),
        g.sq_lap(th_d),
    )


def integrate_ensemble(initial: State, models: list, stepper: StepperConfig,
                       driver: BrownianDriver) -> CoupledResult:
    """Advance several models from the same initial state on one Brownian
    path.  models[0] is the reference; a difference-series dict is produced
    for every other model against it.  A lane that blows up freezes while
    the rest keep going; difference series stop when either member dies.
    """
    if not models:
        raise ValueError("need at least one model")
    g = models[0].grid
    eps = models[0].eps
    for m in models[1:]:
        if m.grid is not g and m.grid != g:
            raise ValueError("all coupled models must share one grid")
        if m.eps != eps:
            raise ValueError("coupled difference norms need a common eps")
        if models[0].variant.family == "pe" and m.variant.family == "pe":
            raise ValueError("invalid pairing: compare hydrostatic models "
                             "against an ns-type reference, not each other")
    for m in models:
        if m.n_modes != driver.n_modes:
            raise ValueError("driver mode count does not match the noise model")
    if abs(driver.dt - stepper.dt) > 1e-15 * max(1.0, stepper.dt):
        raise ValueError("driver and stepper disagree on dt")

    clean = _clean_initial(initial)
    if not (np.all(np.isfinite(clean.v.real)) and np.all(np.isfinite(clean.v.imag))
            and np.all(np.isfinite(clean.theta.real))
            and np.all(np.isfinite(clean.theta.imag))):
        raise ValueError("initial state is not finite")
    lanes = [_Lane(m, clean, stepper) for m in models]
    diffs = [{"times": [], "rows": []} for _ in models[1:]]
    n_steps = stepper.n_steps
    stride = int(stepper.record_stride)
    t0 = clean.time

    # the surrogate also screens the data we start from
    if float(np.sqrt(g.sq_grad(clean.v))) > stepper.blowup_threshold:
        for ln in lanes:
            ln.alive = False
            ln.blew_up = True
            ln.blowup_time = t0
        n_steps = 0

    for n in range(n_steps):
        live = [ln for ln in lanes if ln.alive]
        if not live:
            break
        for ln in live:
            ln.eval_terms()
            ln.push_ledger()
        if n % stride == 0:
            for ln in live:
                ln.record(n)
            for j, d in enumerate(diffs):
                a, b = lanes[0], lanes[j + 1]
                if a.alive and b.alive:
                    d["times"].append(a.state.time)
                    d["rows"].append(_diff_row(a, b))
        dB = driver.increments(n)
        t_next = t0 + (n + 1) * stepper.dt
        for ln in live:
            ln.advance(dB, stepper, t_next)

    # closing ledger row and final record for every surviving lane; a dead
    # lane still carries the terms of its last valid state, record that
    for ln in lanes:
        if ln.alive:
            ln.eval_terms()
            ln.push_ledger()
            ln.record(ln.steps_taken)
        elif ln.terms is not None:
            ln.record(ln.steps_taken)
    for j, d in enumerate(diffs):
        a, b = lanes[0], lanes[j + 1]
        if a.alive and b.alive:
            d["times"].append(a.state.time)
            d["rows"].append(_diff_row(a, b))

    out_diffs = []
    for d in diffs:
        rows = np.asarray(d["rows"]).reshape(-1, len(DIFF_KEYS))
        packed = {"times": np.asarray(d["times"])}
        for i, key in enumerate(DIFF_KEYS):
            packed[key] = rows[:, i] if rows.size else np.zeros(0)
        out_diffs.append(packed)

    return CoupledResult(
        runs=[ln.result(stepper, driver.seed) for ln in lanes],
        diffs=out_diffs,
    )


def integrate(initial: State, variant, noise, stepper: StepperConfig,
              driver: BrownianDriver,
              constants: PhysicalConstants = PhysicalConstants()) -> RunResult:
    """Single-model run.  `variant` may be a ModelVariant (then `noise` is
    the NoiseModel to prepare it with) or an already-prepared model (then
    pass noise=None)."""
    model = _as_model(variant, noise, initial.grid, constants)
    out = integrate_ensemble(initial, [model], stepper, driver)
    return out.runs[0]


def integrate_coupled(initial: State, variant_a, variant_b, noise,
                      stepper: StepperConfig, driver: BrownianDriver,
                      constants: PhysicalConstants = PhysicalConstants()) -> CoupledResult:
    """Two models, one Brownian path.  Unpacks as (run_a, run_b, diff)."""
    model_a = _as_model(variant_a, noise if not isinstance(variant_a, PreparedModel)
                        else None, initial.grid, constants)
    model_b = _as_model(variant_b, noise if not isinstance(variant_b, PreparedModel)
                        else None, initial.grid, constants)
    return integrate_ensemble(initial, [model_a, model_b], stepper, driver)

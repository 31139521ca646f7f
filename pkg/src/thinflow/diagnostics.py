"""Error functionals, stopping-time surrogates and audit checks evaluated
on recorded run series.

Every series entry is a SQUARED norm sampled at the recorded times; the
eps-weighted entries already carry the run's aspect weighting.  Time
integrals are trapezoidal on the recorded samples, suprema run over the
same samples, so a window sliced at shared sample points is additive in
its integral part.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats


# ------------------------------------------------------------------ windows

def _window_indices(times: np.ndarray, window) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if window is None:
        idx = np.arange(times.size)
    else:
        eta, zeta = float(window[0]), float(window[1])
        if zeta < eta:
            raise ValueError("window end precedes its start")
        tol = 1e-12 * max(1.0, abs(eta), abs(zeta))
        idx = np.nonzero((times >= eta - tol) & (times <= zeta + tol))[0]
    if idx.size == 0:
        raise ValueError("window contains no recorded samples")
    return idx


def _sup_and_integral(times, peak_series, integrand_series, window):
    idx = _window_indices(times, window)
    t = np.asarray(times, float)[idx]
    peak = np.asarray(peak_series, float)[idx]
    integrand = np.asarray(integrand_series, float)[idx]
    sup = float(peak.max())
    integral = float(np.trapezoid(integrand, t)) if t.size > 1 else 0.0
    return sup, integral


# -------------------------------------------------------- error functionals

def compute_E0(diff: dict, window=None) -> float:
    """Low-order pathwise error of a coupled run: peak kinetic difference
    plus accumulated gradient difference, fields and tracer separately.
    """
    times = diff["times"]
    su, iu = _sup_and_integral(times, diff["U_Leps"], diff["U_gradeps"], window)
    st, it = _sup_and_integral(times, diff["TH_L2"], diff["TH_V"], window)
    return 0.5 * su + iu + 0.5 * st + it


def compute_E1(diff: dict, window=None, blew_up: bool = False,
               blowup_time=None) -> float:
    """Gradient-level error of a coupled run, infinite when the reference
    run blew up inside the window (no finite bound exists on that event)."""
    times = diff["times"]
    if blew_up:
        end = np.asarray(times, float)[_window_indices(times, window)][-1]
        if blowup_time is None or blowup_time <= end:
            return float("inf")
    su, iu = _sup_and_integral(times, diff["U_Veps"], diff["U_DAeps"], window)
    st, it = _sup_and_integral(times, diff["TH_V"], diff["TH_DA"], window)
    return 0.5 * su + iu + 0.5 * st + it


def _running_E14(times, series):
    vth_V = np.asarray(series["v_V"], float) + np.asarray(series["th_V"], float)
    vth_DA = np.asarray(series["v_DA"], float) + np.asarray(series["th_DA"], float)
    peak = np.maximum.accumulate(0.5 * vth_V ** 2)
    t = np.asarray(times, float)
    integrand = vth_V * vth_DA
    csum = np.zeros_like(t)
    if t.size > 1:
        csum[1:] = np.cumsum(0.5 * (integrand[1:] + integrand[:-1]) * np.diff(t))
    return peak + csum


def compute_E14(times, series: dict, window=None) -> float:
    """Quartic regularity functional of a single run: peak of half the
    squared energy-gradient plus the accumulated V-times-D(A) product,
    velocity and tracer pooled."""
    idx = _window_indices(times, window)
    t = np.asarray(times, float)[idx]
    sub = {k: np.asarray(series[k], float)[idx]
           for k in ("v_V", "th_V", "v_DA", "th_DA")}
    return float(_running_E14(t, sub)[-1])


def tau_delta_surrogate(times, series: dict, delta: float, window=None) -> float:
    """First recorded time the running quartic functional reaches delta;
    the window end when it never does.  Resolution is the record stride."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    idx = _window_indices(times, window)
    t = np.asarray(times, float)[idx]
    sub = {k: np.asarray(series[k], float)[idx]
           for k in ("v_V", "th_V", "v_DA", "th_DA")}
    running = _running_E14(t, sub)
    hit = np.nonzero(running >= delta)[0]
    return float(t[hit[0]]) if hit.size else float(t[-1])


# ------------------------------------------------------------------- audits

def moment_path_value(run, eps: float) -> float:
    """Single-path fourth-moment functional

        sup_t ||u||^4_{L2_eps} + int ||v||^2 ||v||^2_V + eps^4 ||w||^2 ||w||^2_V dt

    evaluated from the recorded squared-norm series."""
    t = np.asarray(run.times, float)
    s = run.series
    sup4 = float(np.max(np.asarray(s["u_Leps"]) ** 2))
    integrand = (np.asarray(s["v_L2"]) * np.asarray(s["v_V"])
                 + eps ** 4 * np.asarray(s["w_L2"]) * np.asarray(s["w_V"]))
    integral = float(np.trapezoid(integrand, t)) if t.size > 1 else 0.0
    return sup4 + integral


def moment_bound_audit(runs_by_eps: dict, max_ratio: float = 1.5,
                       min_paths: int = 20) -> dict:
    """Uniform-in-eps fourth-moment estimate across an ensemble of ns-type
    runs: per eps, the path average of

        sup_t ||u||^4_{L2_eps} + int ||v||^2 ||v||^2_V + eps^4 ||w||^2 ||w||^2_V dt.

    Passes when the estimate does not grow by more than max_ratio across
    consecutive eps (sorted decreasing).
    """
    if len(runs_by_eps) < 2:
        raise ValueError("need at least two eps values to audit")
    eps_sorted = sorted(runs_by_eps, reverse=True)
    estimates, ses, counts = [], [], []
    for eps in eps_sorted:
        runs = runs_by_eps[eps]
        if len(runs) < min_paths:
            raise ValueError(f"ensemble too small at eps={eps}: "
                             f"{len(runs)} paths, need {min_paths}")
        vals = np.array([moment_path_value(r, eps) for r in runs])
        estimates.append(float(vals.mean()))
        ses.append(float(vals.std(ddof=1) / np.sqrt(len(vals))))
        counts.append(len(runs))
    estimates = np.asarray(estimates)
    ratios = estimates[1:] / np.maximum(estimates[:-1], 1e-300)
    return {
        "eps": np.asarray(eps_sorted, float),
        "estimate": estimates,
        "se": np.asarray(ses),
        "n_paths": np.asarray(counts),
        "ratios": ratios,
        "max_ratio": max_ratio,
        "passed": bool(np.all(ratios <= max_ratio)),
    }


def energy_residual(run, window=None, dissipation_scale: float = 1.0,
                    qv_scale: float = 1.0) -> float:
    """Largest signed per-step excess of the discrete energy balance,
    normalized by the peak energy over the run.

    Positive values mean the recorded state gained more energy over a step
    than dissipation, noise input and the martingale increment account for;
    the scheme keeps this at O(dt).  dissipation_scale widens the budget's
    dissipation allowance: values above 1 credit the flow with that much
    slack per unit dissipated, so doubling it drives the result strictly
    negative on any dissipating run, which pins the sign convention.
    """
    led = run.ledger
    e = np.asarray(led["energy"], float)
    if e.size < 2:
        return 0.0
    t = np.asarray(led["time"], float)
    dt = np.diff(t)
    avg = lambda a: 0.5 * (np.asarray(a, float)[1:] + np.asarray(a, float)[:-1])
    diss = avg(led["visc"]) + avg(led["stoch_diss"])
    res = (np.diff(e)
           + dt * (2.0 - dissipation_scale) * diss
           - dt * qv_scale * avg(led["qv"])
           - np.asarray(led["mart"], float)
           + dt * avg(led["buoy_flux"]))
    if window is not None:
        mid = 0.5 * (t[1:] + t[:-1])
        keep = (mid >= window[0]) & (mid <= window[1])
        if not np.any(keep):
            raise ValueError("window contains no recorded steps")
        res = res[keep]
    scale = max(float(e.max()), 1e-300)
    return float(res.max() / scale)


@dataclass(frozen=True)
class RateFit:
    points: tuple
    slope: float
    intercept: float
    r2: float
    ci95: float


def fit_rate(points) -> RateFit:
    """Least-squares exponent of error against eps on log-log axes, with a
    95 percent half-width on the slope."""
    pts = [(float(e), float(err)) for e, err in points]
    if len(pts) < 3:
        raise ValueError("need at least three points to fit a rate")
    for e, err in pts:
        if e <= 0 or err <= 0:
            raise ValueError("rate fits need positive eps and positive errors")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    n = len(pts)
    xbar = x.mean()
    sxx = float(np.sum((x - xbar) ** 2))
    if sxx == 0.0:
        raise ValueError("all eps values coincide")
    slope = float(np.sum((x - xbar) * y) / sxx)
    intercept = float(y.mean() - slope * xbar)
    yhat = intercept + slope * x
    ss_res = float(np.sum((y - yhat) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    if n > 2 and ss_res > 0:
        sigma2 = ss_res / (n - 2)
        ci95 = float(stats.t.ppf(0.975, n - 2) * np.sqrt(sigma2 / sxx))
    else:
        ci95 = 0.0
    return RateFit(points=tuple(pts), slope=slope, intercept=intercept,
                   r2=r2, ci95=ci95)


def h3_boundedness_probe(run, refined=None, max_drift: float = 1.2) -> dict:
    """Curvature-level boundedness of a hydrostatic run: the peak squared
    H^2 size of v and its accumulated H^3 size.  With a dt-refined twin
    the probe also checks both numbers move by at most max_drift."""
    if not run.variant_tag.startswith("pe"):
        raise ValueError("probe applies to hydrostatic runs")
    t = np.asarray(run.times, float)
    sup_h2 = float(np.max(run.series["v_DA"]))
    int_h3 = float(np.trapezoid(run.series["v_DA32"], t)) if t.size > 1 else 0.0
    out = {"sup_H2": sup_h2, "int_H3": int_h3,
           "finite": bool(np.isfinite(sup_h2) and np.isfinite(int_h3))}
    if refined is not None:
        fine = h3_boundedness_probe(refined)
        rs = _drift_ratio(sup_h2, fine["sup_H2"])
        ri = _drift_ratio(int_h3, fine["int_H3"])
        out["ratio_sup"] = rs
        out["ratio_int"] = ri
        out["passed"] = bool(out["finite"] and fine["finite"]
                             and rs <= max_drift and ri <= max_drift)
    return out


def _drift_ratio(a: float, b: float) -> float:
    if a == 0.0 and b == 0.0:
        return 1.0
    lo, hi = sorted([abs(a), abs(b)])
    return float("inf") if lo == 0.0 else hi / lo

"""Fairness and performance indicators computed from closed-loop traces.

All indexes live in [0, 1]. Conventions: a trace over T steps provides
states x_0..x_T and applied inputs u_0..u_{T-1}; every index is evaluated on
t = 0..T-1 (the final state x_T is never used, matching the definition of
the terminal tracking index at T-1).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

TRACKING_AVERAGED = "averaged"
TRACKING_TERMINAL = "terminal"
TRACKING_TAIL = "tail"


def _per_system(vec, n_systems):
    vec = np.asarray(vec, dtype=float)
    return vec.reshape(n_systems, -1)


def jain(u, n_systems) -> float:
    """Jain index of the per-system input 1-norms, in [1/N, 1].

    1 means a perfectly even split, 1/N means a single system received
    everything. An all-zero input is defined as 1 (an even split of
    nothing); callers that need to know can test the input themselves.
    """
    norms = np.abs(_per_system(u, n_systems)).sum(axis=1)
    total = norms.sum()
    denom = n_systems * np.sum(norms ** 2)
    if total <= 0.0 or denom <= 0.0 or not np.isfinite(denom):
        return 1.0
    return float(total ** 2 / denom)


def scaled_jain(u, n_systems) -> float:
    """Jain index rescaled to [0, 1]; defined as 1 for a single system."""
    if n_systems == 1:
        return 1.0
    return float((n_systems * jain(u, n_systems) - 1.0) / (n_systems - 1.0))


def equity_instant(x, x_target, n_systems) -> float:
    """exp(-E) where E is the mean 2-norm deviation of the per-system
    tracking errors from their ensemble average; 1 means perfect equity."""
    err = _per_system(np.asarray(x_target) - np.asarray(x), n_systems)
    dev = err - err.mean(axis=0, keepdims=True)
    spread = float(np.linalg.norm(dev, axis=1).mean())
    return float(np.exp(-spread))


def _trace_arrays(trace):
    states = np.asarray(trace.states, dtype=float)
    inputs = np.asarray(trace.inputs, dtype=float)
    x_target = np.asarray(trace.x_target, dtype=float)
    return states, inputs, x_target, trace.n_systems


def equality_index(trace) -> float:
    """Mean scaled Jain index of the applied inputs."""
    _, inputs, _, n_sys = _trace_arrays(trace)
    vals = [scaled_jain(u, n_sys) for u in inputs]
    return float(np.mean(vals))


def equity_index(trace) -> float:
    """Mean instantaneous equity over t = 0..T-1."""
    states, inputs, x_target, n_sys = _trace_arrays(trace)
    t_steps = inputs.shape[0]
    vals = [equity_instant(states[t], x_target, n_sys) for t in range(t_steps)]
    return float(np.mean(vals))


def _tracking_exponent(states, x_target, n_sys, systems):
    err = (x_target - states).reshape(states.shape[0], n_sys, -1)
    dists = np.linalg.norm(err, axis=2)
    if systems is not None:
        dists = dists[:, list(systems)]
    return dists.mean(axis=1)


def tracking_index(trace, variant=TRACKING_TERMINAL, tau_s=0,
                   systems: Optional[Sequence[int]] = None) -> float:
    """Goal-attainment index.

    ``averaged`` takes the time mean of exp(-mean distance), ``terminal``
    evaluates it at T-1 only, ``tail`` averages from ``tau_s`` on. Passing
    ``systems`` restricts the exponent to a subgroup (or one individual).
    """
    states, inputs, x_target, n_sys = _trace_arrays(trace)
    t_steps = inputs.shape[0]
    expo = _tracking_exponent(states[:t_steps], x_target, n_sys, systems)
    vals = np.exp(-expo)
    if variant == TRACKING_AVERAGED:
        return float(vals.mean())
    if variant == TRACKING_TERMINAL:
        return float(vals[t_steps - 1])
    if variant == TRACKING_TAIL:
        if not 0 <= tau_s <= t_steps - 1:
            raise ValueError("tail start must lie in [0, T-1]")
        return float(vals[tau_s:].mean())
    raise ValueError(f"unknown tracking variant {variant!r}")


def settling_index(trace, alpha_pct=10.0):
    """Per-system settling times and the aggregate index.

    tau^i is the first t at which the distance to the target drops to
    alpha% of its initial value (first crossing; staying is not required),
    T-1 when that never happens, and 0 when the system starts on target.
    """
    states, inputs, x_target, n_sys = _trace_arrays(trace)
    t_steps = inputs.shape[0]
    err = (x_target - states[:t_steps]).reshape(t_steps, n_sys, -1)
    dists = np.linalg.norm(err, axis=2)
    thresholds = (alpha_pct / 100.0) * dists[0]
    taus = []
    for i in range(n_sys):
        hit = np.flatnonzero(dists[:, i] <= thresholds[i] + 1e-15)
        taus.append(int(hit[0]) if hit.size else t_steps - 1)
    if t_steps == 1:
        h_tau = 1.0
    else:
        h_tau = 1.0 - float(np.mean(taus)) / (t_steps - 1)
    return taus, float(h_tau)


def individual_index(trace, i) -> float:
    """Terminal goal attainment of one system: exp(-distance at T-1)."""
    states, inputs, x_target, n_sys = _trace_arrays(trace)
    t_steps = inputs.shape[0]
    err = (x_target - states[t_steps - 1]).reshape(n_sys, -1)
    return float(np.exp(-np.linalg.norm(err[i])))


@dataclass(frozen=True)
class KpiReport:
    h_s: float
    h_s_variant: str
    h_tau: float
    alpha_pct: float
    h_u: float
    h_e: float
    h_s_individual: tuple
    settling_times: tuple
    jain_scaled_series: tuple
    equity_series: tuple
    all_zero_steps: tuple

    def as_dict(self):
        return {
            "h_s": {"variant": self.h_s_variant, "value": self.h_s},
            "h_tau": {"alpha_pct": self.alpha_pct, "value": self.h_tau},
            "h_u": self.h_u,
            "h_e": self.h_e,
            "h_s_individual": list(self.h_s_individual),
        }


def compute_kpis(trace, h_s_variant=TRACKING_TERMINAL, alpha_pct=10.0,
                 tau_s=0) -> KpiReport:
    """All aggregate indexes plus the per-step fairness series."""
    states, inputs, x_target, n_sys = _trace_arrays(trace)
    t_steps = inputs.shape[0]
    h_s = tracking_index(trace, h_s_variant, tau_s)
    taus, h_tau = settling_index(trace, alpha_pct)
    h_u = equality_index(trace)
    h_e = equity_index(trace)
    individual = tuple(individual_index(trace, i) for i in range(n_sys))
    jain_series = tuple(scaled_jain(u, n_sys) for u in inputs)
    equity_series = tuple(equity_instant(states[t], x_target, n_sys)
                          for t in range(t_steps))
    zero_steps = tuple(int(t) for t in range(t_steps)
                       if np.abs(inputs[t]).sum() <= 0.0)
    return KpiReport(h_s=h_s, h_s_variant=h_s_variant, h_tau=h_tau,
                     alpha_pct=alpha_pct, h_u=h_u, h_e=h_e,
                     h_s_individual=individual, settling_times=tuple(taus),
                     jain_scaled_series=jain_series,
                     equity_series=equity_series,
                     all_zero_steps=zero_steps)

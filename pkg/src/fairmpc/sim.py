"""Closed-loop execution: budget updates, weight auto-tuning, receding
horizon solves and trace recording.

Each step t updates the shared budget, optionally re-tunes the fairness
penalties from the measured fairness of the previous step, assembles and
solves the finite-horizon problem at the measured state, applies the first
optimal input to the true plants and records everything.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .metrics import equity_instant, scaled_jain
from .model import (BUDGET_CONSTANT, BUDGET_DEPLETING,
                    BUDGET_DEPLETING_IN_HORIZON, BudgetPolicy, Scenario,
                    build_ensemble, plant_step)
from .ocp import EQUALITY_DC, assemble_ocp
from .solver import (STATUS_INFEASIBLE, CcpSettings, make_backend,
                     solve_fair_mpc)

AUTOTUNE_FIXED = "fixed"
AUTOTUNE_CASE_A = "case-a"
AUTOTUNE_CASE_B = "case-b"
AUTOTUNE_MODES = (AUTOTUNE_FIXED, AUTOTUNE_CASE_A, AUTOTUNE_CASE_B)

STRATEGY_MASKS = {
    "performance-only": (False, False),
    "performance-equality": (True, False),
    "performance-equity": (False, True),
    "fair-mpc": (True, True),
}

WEIGHT_CLAMP = (1e-3, 1e3)
BUDGET_FLOOR = 1e-9

STATUS_BUDGET_EXHAUSTED = "budget-exhausted"


@dataclass(frozen=True)
class SimulationTrace:
    """Closed-loop time series; ``states`` has one more row than ``inputs``."""
    states: np.ndarray          # (T+1, nN); last row is the final state
    inputs: np.ndarray          # (T, mN)
    budgets: np.ndarray         # (T,)
    rho_bar: np.ndarray         # (T, N) active (post-mask) penalties
    w_bar: np.ndarray           # (T, N) diagonal coefficient of the active W
    jain_scaled: np.ndarray     # (T,)
    equity: np.ndarray          # (T,)
    statuses: tuple             # (T,) per-step solver status strings
    outer_iterations: np.ndarray
    x_target: np.ndarray
    u_target: np.ndarray
    n_systems: int
    n: int
    m: int
    strategy: str
    autotune_mode: str
    t_bar: Optional[int]
    aborted: bool = False
    abort_reason: str = ""

    @property
    def t_steps(self):
        return self.inputs.shape[0]

    @property
    def final_state(self):
        return self.states[-1]


@dataclass(frozen=True)
class AutotuneState:
    """Time-varying penalty state for the inverse-index tuning rule."""
    mode: str
    rho_bar: float
    w_bar: float
    t_bar: Optional[int] = None
    clamp: tuple = WEIGHT_CLAMP

    def __post_init__(self):
        if self.mode not in AUTOTUNE_MODES:
            raise ValueError(f"unknown autotune mode {self.mode!r}")


def update_budget(policy: BudgetPolicy, previous_u_bar, applied_input):
    """Budget available at the next step given the effort just spent."""
    if policy.mode == BUDGET_CONSTANT:
        return policy.u_bar_0
    spent = float(np.abs(np.asarray(applied_input, dtype=float)).sum())
    return max(0.0, float(previous_u_bar) - spent)


def autotune_weights(state: AutotuneState, measured_input, measured_errors,
                     t, n_systems) -> AutotuneState:
    """Inverse-proportional update of the fairness penalties.

    The equality penalty follows 1/(scaled Jain of the last input), halved
    after the trigger step in case A (case B never halves); the equity
    penalty follows 1/(instantaneous equity of the last errors). The
    inverse-index updates are clamped so a vanishing index cannot blow the
    weights up; the halving branch is left free to decay to zero, since a
    floor would defeat its purpose of phasing the equality pressure out.
    """
    lo, hi = state.clamp
    if state.mode == AUTOTUNE_FIXED:
        return state
    if state.mode == AUTOTUNE_CASE_A and state.t_bar is not None \
            and t > state.t_bar:
        rho = state.rho_bar / 2.0
    else:
        jval = scaled_jain(measured_input, n_systems)
        rho = float(np.clip(1.0 / max(jval, 1.0 / hi), lo, hi))
    errs = np.asarray(measured_errors, dtype=float)
    err_mat = errs.reshape(n_systems, -1)
    dev = err_mat - err_mat.mean(axis=0, keepdims=True)
    spread = float(np.linalg.norm(dev, axis=1).mean())
    w = float(np.clip(np.exp(spread), lo, hi))  # 1 / exp(-spread), clamped
    return replace(state, rho_bar=rho, w_bar=w)


def detect_tbar(states_so_far, x_target, n_systems, sim_steps,
                probe=None) -> Optional[int]:
    """First step at which some system sat above its target for a window of
    ceil(0.2 T) consecutive steps (probe < 0 throughout); None otherwise.

    The default probe is the first state component of the tracking error
    x_s - x, which matches scalar systems directly; pass a callable
    ``probe(states_row) -> (N,) array`` to override.
    """
    states_so_far = np.asarray(states_so_far, dtype=float)
    n_dim = states_so_far.shape[1] // n_systems
    if probe is None:
        def probe(row):
            err = (x_target - row).reshape(n_systems, n_dim)
            return err[:, 0]
    window = max(1, math.ceil(0.2 * sim_steps))
    t_avail = states_so_far.shape[0]
    probes = np.stack([probe(states_so_far[t]) for t in range(t_avail)])
    neg = probes < 0.0
    for t in range(window - 1, t_avail):
        if bool(np.any(np.all(neg[t - window + 1:t + 1], axis=0))):
            return t
    return None


def _expand_bars(scenario: Scenario, weights):
    """Per-system (rho_bar, w_bar diagonal coefficient) for trace records."""
    n_sys = scenario.n_systems
    rho = list(weights.rho_bar)
    wb = [float(np.atleast_2d(w)[0, 0]) for w in weights.w_bar]
    if scenario.classes is not None and len(rho) == len(scenario.classes) \
            and len(rho) != n_sys:
        assign = {}
        for c_idx, group in enumerate(scenario.classes):
            for i in group:
                assign[i] = c_idx
        rho = [rho[assign[i]] for i in range(n_sys)]
        wb = [wb[assign[i]] for i in range(n_sys)]
    elif len(rho) == 1 and n_sys > 1:
        rho = rho * n_sys
        wb = wb * n_sys
    return np.array(rho), np.array(wb)


def _shift_warm_start(prev_states, prev_inputs, x_now, ens):
    """Shift the previous plan one step, repeat the last input, and re-roll
    the states from the newly measured one so the pair obeys the dynamics."""
    k_steps = prev_inputs.shape[0]
    inputs = np.vstack([prev_inputs[1:], prev_inputs[-1]])
    states = np.empty_like(prev_states)
    states[0] = x_now
    for k in range(k_steps - 1):
        states[k + 1] = ens.a @ states[k] + ens.b @ inputs[k]
    return states, inputs


def run_closed_loop(scenario: Scenario, solver_settings: Optional[CcpSettings]
                    = None, strategy="fair-mpc", autotune=AUTOTUNE_FIXED,
                    budget_in_horizon=False, equality_mode=EQUALITY_DC,
                    probe=None) -> SimulationTrace:
    """Run the receding-horizon loop for the scenario's full span.

    A solver infeasibility aborts with the partial trace (``aborted`` set);
    an exhausted depleting budget instead forces zero inputs and continues.
    """
    if strategy not in STRATEGY_MASKS:
        raise ValueError(f"unknown strategy {strategy!r}; "
                         f"choose from {sorted(STRATEGY_MASKS)}")
    if autotune not in AUTOTUNE_MODES:
        raise ValueError(f"unknown autotune mode {autotune!r}")
    settings = solver_settings or CcpSettings()
    rho_on, w_on = STRATEGY_MASKS[strategy]
    ens = build_ensemble(scenario)
    n_sys, n, m = ens.n_systems, ens.n, ens.m
    t_total = scenario.sim_steps_t
    in_horizon = budget_in_horizon or \
        scenario.budget.mode == BUDGET_DEPLETING_IN_HORIZON

    states = np.zeros((t_total + 1, n * n_sys))
    inputs = np.zeros((t_total, m * n_sys))
    budgets = np.zeros(t_total)
    rho_rec = np.zeros((t_total, n_sys))
    w_rec = np.zeros((t_total, n_sys))
    jain_rec = np.zeros(t_total)
    equity_rec = np.zeros(t_total)
    outer_rec = np.zeros(t_total, dtype=int)
    statuses = []

    states[0] = scenario.stacked_initial_state()
    auto = AutotuneState(mode=autotune, rho_bar=1.0, w_bar=1.0)
    weights0 = scenario.weights
    u_bar = scenario.budget.u_bar_0
    instance = None
    backend = None
    prev_solution = None
    aborted = False
    abort_reason = ""

    for t in range(t_total):
        if t > 0:
            u_bar = update_budget(scenario.budget, u_bar, inputs[t - 1])
        if autotune != AUTOTUNE_FIXED and t >= 1:
            if auto.t_bar is None:
                tb = detect_tbar(states[:t + 1], ens.x_s, n_sys, t_total,
                                 probe)
                if tb is not None:
                    auto = replace(auto, t_bar=tb)
            errors_prev = ens.x_s - states[t - 1]
            auto = autotune_weights(auto, inputs[t - 1], errors_prev, t,
                                    n_sys)
            weights_t = weights0.with_bars(
                rho_bar=(auto.rho_bar,) * len(weights0.rho_bar),
                w_bar=tuple(auto.w_bar * np.eye(n)
                            for _ in weights0.w_bar))
        else:
            weights_t = weights0
        active = weights_t.masked(rho_on, w_on)
        rho_rec[t], w_rec[t] = _expand_bars(scenario, active)
        budgets[t] = u_bar

        if u_bar <= BUDGET_FLOOR:
            u_t = np.zeros(m * n_sys)
            statuses.append(STATUS_BUDGET_EXHAUSTED)
            outer_rec[t] = 0
        else:
            rebuild = instance is None or (autotune != AUTOTUNE_FIXED and t >= 1)
            if rebuild:
                instance = assemble_ocp(scenario, states[t], u_bar, active,
                                        budget_in_horizon=in_horizon,
                                        equality_mode=equality_mode)
                backend = make_backend(instance, settings)
            else:
                instance = instance.with_updates(states[t], u_bar)
            warm = None
            if prev_solution is not None:
                warm = _shift_warm_start(prev_solution[0], prev_solution[1],
                                         states[t], ens)
            result = solve_fair_mpc(instance, settings, warm_start=warm,
                                    backend=backend)
            statuses.append(result.status)
            outer_rec[t] = result.outer_iterations
            if result.status == STATUS_INFEASIBLE:
                aborted = True
                abort_reason = (f"solver infeasible at step {t} "
                                f"(budget {u_bar:g})")
                states = states[:t + 1]
                inputs = inputs[:t]
                budgets = budgets[:t]
                rho_rec, w_rec = rho_rec[:t], w_rec[:t]
                jain_rec, equity_rec = jain_rec[:t], equity_rec[:t]
                outer_rec = outer_rec[:t]
                statuses = statuses[:-1]
                break
            prev_solution = (result.states, result.inputs)
            u_t = result.first_input

        inputs[t] = u_t
        jain_rec[t] = scaled_jain(u_t, n_sys)
        equity_rec[t] = equity_instant(states[t], ens.x_s, n_sys)
        nxt = [plant_step(scenario.systems[i],
                          states[t, i * n:(i + 1) * n],
                          u_t[i * m:(i + 1) * m]) for i in range(n_sys)]
        states[t + 1] = np.concatenate(nxt)

    return SimulationTrace(states=states, inputs=inputs, budgets=budgets,
                           rho_bar=rho_rec, w_bar=w_rec,
                           jain_scaled=jain_rec, equity=equity_rec,
                           statuses=tuple(statuses),
                           outer_iterations=outer_rec,
                           x_target=ens.x_s, u_target=ens.u_s,
                           n_systems=n_sys, n=n, m=m, strategy=strategy,
                           autotune_mode=autotune, t_bar=auto.t_bar,
                           aborted=aborted, abort_reason=abort_reason)

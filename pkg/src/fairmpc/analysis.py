"""Numerical verification of the cost identities and bounds.

Every check evaluates both sides of a claimed identity/inequality on
concrete trajectories with straight-from-definition cost arithmetic (kept
deliberately independent of the transcription module, which these routines
serve as an oracle for):

* the tracking+equity cost equals a single quadratic form in the combined
  weight (an algebraic identity, checked on arbitrary trajectories);
* the fairness cost is bounded by a quadratic-tracking cost plus a constant
  offset that depends only on the targets and the budget;
* at the end of the horizon the fairness stage cost exceeds the quadratic
  stage cost by at most (N^2+1)/N^2 * sum_i rho_i * budget^2 on feasible
  points (the sharper (N^2-1)/N^2 constant is evaluated and reported too,
  but not gated: the chain of estimates that proves the bound only supports
  the weaker one);
* with a common target and a budget matched to it, the fairness-optimal
  objective coincides with the quadratic-tracking optimum.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import (BudgetPolicy, EquilibriumTarget, LtiSystem, PolytopeSet,
                    Scenario, WeightSet, build_ensemble)
from .ocp import (assemble_ocp, assemble_tracking_mpc, build_equity_matrices,
                  build_qtilde, expand_class_weights)
from .solver import CcpSettings, solve_fair_mpc

DEFAULT_REL_TOL = 1e-9


@dataclass(frozen=True)
class BoundReport:
    left_hand: float
    right_hand: float
    satisfied: bool
    margin: float

    @classmethod
    def for_inequality(cls, lhs, rhs, tol=DEFAULT_REL_TOL):
        lhs, rhs = float(lhs), float(rhs)
        ok = lhs <= rhs + tol * max(1.0, abs(rhs))
        return cls(left_hand=lhs, right_hand=rhs, satisfied=ok,
                   margin=rhs - lhs)

    @classmethod
    def for_identity(cls, lhs, rhs, tol=DEFAULT_REL_TOL):
        lhs, rhs = float(lhs), float(rhs)
        ok = abs(lhs - rhs) <= tol * max(1.0, abs(rhs))
        return cls(left_hand=lhs, right_hand=rhs, satisfied=ok,
                   margin=rhs - lhs)


@dataclass(frozen=True)
class StageBoundReport:
    guaranteed_bound: BoundReport  # (N^2+1)/N^2 constant: must hold
    sharp_bound: BoundReport       # (N^2-1)/N^2 constant: informational


# -- direct-from-definition cost pieces (the oracle route) ------------------

def _reshape_errors(states, x_target, n_sys):
    states = np.asarray(states, dtype=float)
    err = states - x_target
    return err.reshape(states.shape[:-1] + (n_sys, -1))


def tracking_cost(states, x_target, q_weights, n_sys):
    """sum_k sum_i ||x^i_k - x_s^i||^2_{Q_i}; accepts (K, nN) or (D, K, nN)."""
    err = _reshape_errors(states, x_target, n_sys)
    q_stack = np.stack([np.atleast_2d(q) for q in q_weights])
    return np.einsum("...kin,inm,...kim->...", err, q_stack, err)


def equity_cost(states, x_target, w_weights, n_sys):
    """sum_k sum_i ||e^i_k - mean_j e^j_k||^2_{W_i}."""
    err = _reshape_errors(states, x_target, n_sys)
    dev = err - err.mean(axis=-2, keepdims=True)
    w_stack = np.stack([np.atleast_2d(w) for w in w_weights])
    return np.einsum("...kin,inm,...kim->...", dev, w_stack, dev)


def equality_cost(inputs, rho_eff, share, n_sys):
    """sum_k sum_i rho_i (||u^i_k||_1 - share)^2."""
    inputs = np.asarray(inputs, dtype=float)
    norms = np.abs(inputs.reshape(inputs.shape[:-1] + (n_sys, -1))).sum(axis=-1)
    return ((norms - share) ** 2 * rho_eff).sum(axis=(-1, -2)) \
        if norms.ndim >= 2 else ((norms - share) ** 2 * rho_eff).sum()


def input_quadratic_cost(inputs, u_target, rho_eff, n_sys, m):
    """sum_k sum_i ||u^i_k - u_s^i||^2 with weight R_i = m rho_i I."""
    inputs = np.asarray(inputs, dtype=float)
    diff = (inputs - u_target).reshape(inputs.shape[:-1] + (n_sys, m))
    sq = (diff ** 2).sum(axis=-1)
    return (m * rho_eff * sq).sum(axis=(-1, -2)) if sq.ndim >= 2 \
        else (m * rho_eff * sq).sum()


# -- verifiers ---------------------------------------------------------------

def verify_cost_identity(states, x_target, q_weights, w_weights,
                  tol=DEFAULT_REL_TOL) -> BoundReport:
    """Tracking + equity cost equals the combined-weight quadratic form.

    Holds for arbitrary trajectories, not only feasible ones. ``states``
    may be one trajectory (K, nN) or a batch (D, K, nN); the report carries
    the worst-case pair over the batch.
    """
    n_sys = len(q_weights)
    lhs = tracking_cost(states, x_target, q_weights, n_sys) \
        + equity_cost(states, x_target, w_weights, n_sys)
    s_mats = build_equity_matrices(np.atleast_2d(q_weights[0]).shape[0], n_sys)
    q_tilde = build_qtilde(q_weights, w_weights, s_mats)
    err = np.asarray(states, dtype=float) - x_target
    rhs = np.einsum("...kn,nm,...km->...", err, q_tilde, err)
    lhs = np.atleast_1d(lhs)
    rhs = np.atleast_1d(rhs)
    rel = np.abs(lhs - rhs) / np.maximum(1.0, np.abs(rhs))
    worst = int(np.argmax(rel))
    return BoundReport.for_identity(lhs[worst], rhs[worst], tol)


def equality_offset_term(u_targets, u_bar, rho_eff, m, horizon) -> float:
    """Constant offset m L sum_i rho_i ||u_s^i - (budget/(mN)) 1||_2^2."""
    n_sys = len(rho_eff)
    even = float(u_bar) / (m * n_sys)
    total = 0.0
    for i in range(n_sys):
        diff = np.atleast_1d(u_targets[i]) - even
        total += rho_eff[i] * float(diff @ diff)
    return m * horizon * total


def verify_cost_upper_bound(states, inputs, scenario: Scenario, u_bar,
                  weights=None, tol=DEFAULT_REL_TOL) -> BoundReport:
    """Fairness cost <= quadratic-tracking cost + offset, over the stages.

    Both sides use the combined tracking+equity weight for the state part,
    so the check reduces to the input terms; it is evaluated in full on the
    given trajectories (single or batched) and reports the worst case.
    """
    w_set = weights if weights is not None else scenario.weights
    rho_eff, w_eff = expand_class_weights(scenario, w_set)
    n_sys, m = scenario.n_systems, scenario.m
    horizon = scenario.horizon_l
    x_s = np.concatenate([t.x_s for t in scenario.targets])
    u_s = np.concatenate([t.u_s for t in scenario.targets])
    share = float(u_bar) / n_sys
    states = np.asarray(states, dtype=float)[..., :horizon, :]
    inputs = np.asarray(inputs, dtype=float)[..., :horizon, :]
    j_p = tracking_cost(states, x_s, w_set.q_weights, n_sys)
    j_e = equity_cost(states, x_s, w_eff, n_sys)
    j_u = equality_cost(inputs, rho_eff, share, n_sys)
    lhs = np.atleast_1d(j_p + j_e + j_u)
    state_part = j_p + j_e  # identical on both sides (combined weight)
    r_part = input_quadratic_cost(inputs, u_s, rho_eff, n_sys, m)
    u_tgts = [t.u_s for t in scenario.targets]
    rhs = np.atleast_1d(state_part + r_part
                        + equality_offset_term(u_tgts, u_bar, rho_eff, m, horizon))
    margins = rhs - lhs - tol * np.maximum(1.0, np.abs(rhs))
    worst = int(np.argmin(margins))
    return BoundReport.for_inequality(lhs[worst], rhs[worst], tol)


def verify_stage_bound(terminal_state, terminal_input, scenario: Scenario,
                       u_bar, weights=None,
                       tol=DEFAULT_REL_TOL) -> StageBoundReport:
    """Terminal-stage comparison of the fairness and quadratic stage costs
    on allocation-feasible points. Gated with the (N^2+1)/N^2 constant."""
    w_set = weights if weights is not None else scenario.weights
    rho_eff, w_eff = expand_class_weights(scenario, w_set)
    n_sys, m = scenario.n_systems, scenario.m
    x_s = np.concatenate([t.x_s for t in scenario.targets])
    u_s = np.concatenate([t.u_s for t in scenario.targets])
    share = float(u_bar) / n_sys
    xs_ = np.asarray(terminal_state, dtype=float)
    us_ = np.asarray(terminal_input, dtype=float)
    if xs_.ndim == 1:
        xs_ = xs_[None, :]
        us_ = us_[None, :]
    state_part = tracking_cost(xs_[:, None, :], x_s, w_set.q_weights, n_sys) \
        + equity_cost(xs_[:, None, :], x_s, w_eff, n_sys)
    ell_fair = state_part + equality_cost(us_[:, None, :], rho_eff, share,
                                          n_sys)
    ell = state_part + input_quadratic_cost(us_[:, None, :], u_s, rho_eff,
                                            n_sys, m)
    rho_sum = float(np.sum(rho_eff)) * float(u_bar) ** 2
    k_safe = (n_sys ** 2 + 1) / n_sys ** 2
    k_sharp = (n_sys ** 2 - 1) / n_sys ** 2
    lhs = np.atleast_1d(ell_fair)
    rhs_safe = np.atleast_1d(ell) + k_safe * rho_sum
    rhs_sharp = np.atleast_1d(ell) + k_sharp * rho_sum
    m_safe = rhs_safe - lhs - tol * np.maximum(1.0, np.abs(rhs_safe))
    m_sharp = rhs_sharp - lhs - tol * np.maximum(1.0, np.abs(rhs_sharp))
    wp, ws = int(np.argmin(m_safe)), int(np.argmin(m_sharp))
    return StageBoundReport(
        guaranteed_bound=BoundReport.for_inequality(lhs[wp], rhs_safe[wp], tol),
        sharp_bound=BoundReport.for_inequality(lhs[ws], rhs_sharp[ws], tol))


def terminal_stage_cap(scenario: Scenario, u_bar, epsilon=0.0, weights=None,
                   unfeasible_targets=False) -> float:
    """Admissible cap on the terminal fairness stage cost.

    Default: ((N^2+1)/N^2) sum_i rho_i budget^2 + eps. The unfeasible-target
    variant replaces the uniform budget square with per-system
    ||u_s^i||_1^2 + budget^2/N^2 terms.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    w_set = weights if weights is not None else scenario.weights
    rho_eff, _ = expand_class_weights(scenario, w_set)
    n_sys = scenario.n_systems
    u_bar = float(u_bar)
    if unfeasible_targets:
        total = 0.0
        for i, tgt in enumerate(scenario.targets):
            norm1 = float(np.abs(tgt.u_s).sum())
            total += rho_eff[i] * (norm1 ** 2 + u_bar ** 2 / n_sys ** 2)
        return total + epsilon
    return ((n_sys ** 2 + 1) / n_sys ** 2) * float(np.sum(rho_eff)) \
        * u_bar ** 2 + epsilon


def build_common_target_scenario() -> Scenario:
    """Two scalar systems sharing one equilibrium pair, with the budget
    matched so the even split per system equals the equilibrium input."""
    systems = (LtiSystem([[0.5]], [[0.1]], label="fast"),
               LtiSystem([[0.75]], [[0.05]], label="slow"))
    x_s = np.array([1.0])
    targets = tuple(EquilibriumTarget(x_s, [(1 - a) * 1.0 / b])
                    for a, b in ((0.5, 0.1), (0.75, 0.05)))
    weights = WeightSet(q_weights=(np.eye(1), np.eye(1)),
                        rho_bar=(2.0, 2.0),
                        w_bar=(np.eye(1), np.eye(1)),
                        gamma_u=0.1, gamma_e=1.0, beta=0.1,
                        lambda_x=0.1, lambda_u=0.1)
    n_sys = len(systems)
    u_common = float(targets[0].u_s[0])
    budget = BudgetPolicy(mode="constant", u_bar_0=1 * n_sys * u_common)
    return Scenario(systems=systems, targets=targets,
                    input_sets=tuple(PolytopeSet.unconstrained(1)
                                     for _ in systems),
                    state_sets=tuple(PolytopeSet.unconstrained(1)
                                     for _ in systems),
                    budget=budget, weights=weights, horizon_l=15,
                    sim_steps_t=20,
                    initial_states=(np.zeros(1), np.zeros(1)),
                    name="common-target")


def verify_common_target_equivalence(scenario: Optional[Scenario] = None,
                     solver_settings: Optional[CcpSettings] = None,
                     rel_tol=1e-5) -> BoundReport:
    """With one shared target and budget = m N * common equilibrium input,
    the fairness-optimal objective matches the quadratic-tracking optimum.
    """
    scen = scenario if scenario is not None else build_common_target_scenario()
    u_first = scen.targets[0].u_s
    for tgt in scen.targets:
        if not np.allclose(tgt.u_s, u_first, atol=1e-12):
            raise ValueError("equivalence check needs a common equilibrium input")
    if np.ptp(u_first) > 1e-12:
        raise ValueError("common equilibrium input must have equal components")
    u_bar = scen.m * scen.n_systems * float(u_first[0])
    settings = solver_settings or CcpSettings()
    x0 = scen.stacked_initial_state()
    fair = solve_fair_mpc(assemble_ocp(scen, x0, u_bar), settings)
    track = solve_fair_mpc(assemble_tracking_mpc(scen, x0, u_bar), settings)
    ens = build_ensemble(scen)
    obj_fair = fair.cost.total
    # quadratic-tracking objective of the tracking optimum, with its own
    # input penalty in place of the even-split term
    rho_eff, w_eff = expand_class_weights(scen)
    states, inputs = track.states, track.inputs
    horizon = scen.horizon_l
    state_all = tracking_cost(states, ens.x_s, scen.weights.q_weights,
                              scen.n_systems) \
        + equity_cost(states, ens.x_s, w_eff, scen.n_systems)
    state_stage = tracking_cost(states[:horizon], ens.x_s,
                                scen.weights.q_weights, scen.n_systems) \
        + equity_cost(states[:horizon], ens.x_s, w_eff, scen.n_systems)
    state_term = state_all - state_stage
    r_stage = input_quadratic_cost(inputs[:horizon], ens.u_s, rho_eff,
                                   scen.n_systems, scen.m)
    r_term = input_quadratic_cost(inputs[horizon:], ens.u_s, rho_eff,
                                  scen.n_systems, scen.m)
    slack = scen.weights.lambda_x * track.eps_x ** 2 \
        + scen.weights.lambda_u * track.eps_u ** 2
    obj_track = float(state_stage + r_stage
                      + scen.weights.beta * (state_term + r_term) + slack)
    return BoundReport.for_identity(obj_fair, obj_track, rel_tol)


# -- random draws ------------------------------------------------------------

def draw_random_trajectories(n_draws, k_steps, n_dim, n_systems, rng,
                             spread=3.0):
    """Unconstrained state trajectories for identity checks."""
    return rng.uniform(-spread, spread, size=(n_draws, k_steps,
                                              n_dim * n_systems))


def draw_feasible_trajectories(scenario: Scenario, u_bar, n_draws, rng,
                               state_spread=2.0):
    """Dynamics-consistent trajectories whose inputs respect the shared
    allocation bound at every step of the horizon."""
    ens = build_ensemble(scenario)
    n_sys, m = ens.n_systems, ens.m
    k_steps = scenario.horizon_l + 1
    nu = m * n_sys
    raw = rng.uniform(-1.0, 1.0, size=(n_draws, k_steps, nu))
    norms = np.abs(raw.reshape(n_draws, k_steps, n_sys, m)).sum(axis=(2, 3))
    spend = float(u_bar) * rng.uniform(0.0, 1.0, size=(n_draws, k_steps))
    scale = np.where(norms > 1e-12, spend / np.maximum(norms, 1e-12), 0.0)
    inputs = raw * scale[:, :, None]
    states = np.empty((n_draws, k_steps, ens.a.shape[0]))
    x0 = ens.x_s + rng.uniform(-state_spread, state_spread,
                               size=(n_draws, ens.a.shape[0]))
    states[:, 0] = x0
    for k in range(k_steps - 1):
        states[:, k + 1] = states[:, k] @ ens.a.T + inputs[:, k] @ ens.b.T
    return states, inputs


@dataclass(frozen=True)
class VerificationSummary:
    cost_identity: BoundReport
    cost_upper_bound: BoundReport
    stage: StageBoundReport
    equivalence: Optional[BoundReport]
    draws: int

    @property
    def all_passed(self):
        checks = [self.cost_identity.satisfied, self.cost_upper_bound.satisfied,
                  self.stage.guaranteed_bound.satisfied]
        if self.equivalence is not None:
            checks.append(self.equivalence.satisfied)
        return all(checks)


def run_verification_suite(scenario: Scenario, draws=1000, seed=0,
                           include_equivalence=True) -> VerificationSummary:
    """Random-draw verification of all bounds on one scenario."""
    rng = np.random.default_rng(seed)
    u_bar = scenario.budget.u_bar_0
    _, w_eff = expand_class_weights(scenario)
    if draws > 0:
        states, inputs = draw_feasible_trajectories(scenario, u_bar, draws,
                                                    rng)
        x_s = np.concatenate([t.x_s for t in scenario.targets])
        cost_identity = verify_cost_identity(states, x_s, scenario.weights.q_weights, w_eff)
        cost_upper_bound = verify_cost_upper_bound(states, inputs, scenario, u_bar)
        stage = verify_stage_bound(states[:, -1, :], inputs[:, -1, :],
                                   scenario, u_bar)
    else:
        trivially = BoundReport.for_identity(0.0, 0.0)
        cost_identity = cost_upper_bound = trivially
        stage = StageBoundReport(guaranteed_bound=trivially, sharp_bound=trivially)
    equivalence = verify_common_target_equivalence() if include_equivalence else None
    return VerificationSummary(cost_identity=cost_identity, cost_upper_bound=cost_upper_bound, stage=stage,
                               equivalence=equivalence, draws=draws)

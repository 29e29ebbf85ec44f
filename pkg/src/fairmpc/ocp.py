"""Finite-horizon optimization problem assembly and exact cost evaluation.

The fairness-aware control problem is transcribed into a box-constrained QP
over explicit state, input, sign-split, surrogate-effort and slack variables:

* the input 1-norms are encoded by splits ``u = u+ - u-`` with surrogate
  per-system efforts ``s^i_k = 1'(u+ + u-)`` that upper-bound the true norms;
* the shared-effort constraint caps the surrogate efforts at every step of
  the horizon (optionally through an explicit in-horizon budget recursion);
* the horizon ends at an equilibrium whose 1-norm distance to the target
  pair is bounded by two penalized slacks;
* the even-split penalty ``rho * (||u^i||_1 - share)^2`` is nonconvex, so it
  is stored in difference-of-convex form: a convex quadratic in the
  surrogate efforts plus a linear part that the outer solver re-linearizes
  around sign patterns. A one-sided hinge variant with guaranteed convexity
  is available as an alternative formulation.

The equity penalty is folded into a single state weight: deviations of the
per-system tracking errors from their mean are a linear map of the stacked
error, so tracking plus equity equals one positive-definite quadratic form.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .model import Scenario, build_ensemble

_structure_counter = itertools.count()

EQUALITY_DC = "dc"
EQUALITY_HINGE = "hinge"


@dataclass(frozen=True)
class EquivalentWeights:
    """Mean-deviation maps S^i and the combined tracking+equity weight."""
    s_matrices: tuple
    q_tilde: np.ndarray

    @classmethod
    def build(cls, q_weights, w_weights):
        n = np.atleast_2d(q_weights[0]).shape[0]
        s_mats = build_equity_matrices(n, len(q_weights))
        return cls(s_matrices=tuple(s_mats),
                   q_tilde=build_qtilde(q_weights, w_weights, s_mats))


@dataclass(frozen=True)
class CostBreakdown:
    j_p: float
    j_u: float
    j_e: float
    terminal_v: float
    slack_penalty: float
    total: float


def build_equity_matrices(n: int, n_systems: int):
    """Matrices S^i mapping the stacked error to the i-th mean deviation.

    Block j of S^i is ((N-1)/N) I for j == i and -(1/N) I otherwise, so
    S^i (x - x_s) = e^i - mean_j e^j. Rows sum to zero across blocks.
    """
    if n < 1 or n_systems < 1:
        raise ValueError("dimensions must be positive")
    eye = np.eye(n)
    mats = []
    for i in range(n_systems):
        blocks = [(-1.0 / n_systems) * eye for _ in range(n_systems)]
        blocks[i] = ((n_systems - 1.0) / n_systems) * eye
        mats.append(np.hstack(blocks))
    return mats


def build_qtilde(q_weights, w_weights, s_matrices) -> np.ndarray:
    """Combined weight diag(Q^1..Q^N) + sum_i S_i' W_i S_i (positive definite)."""
    n = np.atleast_2d(q_weights[0]).shape[0]
    n_sys = len(q_weights)
    q_tilde = np.zeros((n * n_sys, n * n_sys))
    for i, q in enumerate(q_weights):
        q = np.atleast_2d(q)
        eigmin = float(np.linalg.eigvalsh((q + q.T) / 2).min())
        if eigmin <= 0:
            raise ValueError(f"tracking weight {i} must be positive definite")
        q_tilde[i * n:(i + 1) * n, i * n:(i + 1) * n] = q
    for i, (w, s_mat) in enumerate(zip(w_weights, s_matrices)):
        w = np.atleast_2d(w)
        eigmin = float(np.linalg.eigvalsh((w + w.T) / 2).min())
        if eigmin < -1e-10:
            raise ValueError(f"equity weight {i} must be positive semidefinite")
        q_tilde += s_mat.T @ w @ s_mat
    q_tilde = (q_tilde + q_tilde.T) / 2
    if float(np.linalg.eigvalsh(q_tilde).min()) <= 0:
        raise ValueError("combined weight lost positive definiteness")
    return q_tilde


def expand_class_weights(scenario: Scenario, weights=None):
    """Per-system effective penalties (rho^i, W^i) after class expansion
    and scaling: rho = gamma_u * rho_bar, W = gamma_e * w_bar."""
    w_set = weights if weights is not None else scenario.weights
    n_sys = scenario.n_systems
    rho_bar = list(w_set.rho_bar)
    w_bar = list(w_set.w_bar)
    if scenario.classes is not None and len(rho_bar) == len(scenario.classes) \
            and len(rho_bar) != n_sys:
        assign = {}
        for c_idx, group in enumerate(scenario.classes):
            for i in group:
                assign[i] = c_idx
        missing = [i for i in range(n_sys) if i not in assign]
        if missing:
            raise ValueError(f"systems {missing} belong to no class")
        rho_bar = [rho_bar[assign[i]] for i in range(n_sys)]
        w_bar = [w_bar[assign[i]] for i in range(n_sys)]
    elif len(rho_bar) == 1 and n_sys > 1:
        rho_bar = rho_bar * n_sys
        w_bar = w_bar * n_sys
    if len(rho_bar) != n_sys or len(w_bar) != n_sys:
        raise ValueError("cannot expand fairness weights to one per system")
    rho_eff = np.array([w_set.gamma_u * r for r in rho_bar])
    w_eff = tuple(w_set.gamma_e * np.atleast_2d(w) for w in w_bar)
    return rho_eff, w_eff


@dataclass(frozen=True)
class VariableLayout:
    """Column layout of the decision vector."""
    n: int
    m: int
    n_systems: int
    horizon: int
    off_x: int
    off_u: int
    off_up: int
    off_um: int
    off_s: int
    off_vp: int
    off_vm: int
    off_wp: int
    off_wm: int
    off_eps: int
    off_h: int
    off_ut: int
    n_vars: int

    @property
    def nx(self):
        return self.n * self.n_systems

    @property
    def nu(self):
        return self.m * self.n_systems

    @property
    def n_steps(self):
        return self.horizon + 1

    def x_k(self, k):
        return slice(self.off_x + k * self.nx, self.off_x + (k + 1) * self.nx)

    def u_k(self, k):
        return slice(self.off_u + k * self.nu, self.off_u + (k + 1) * self.nu)

    def up_k(self, k):
        return slice(self.off_up + k * self.nu, self.off_up + (k + 1) * self.nu)

    def um_k(self, k):
        return slice(self.off_um + k * self.nu, self.off_um + (k + 1) * self.nu)

    def s_k(self, k):
        return slice(self.off_s + k * self.n_systems,
                     self.off_s + (k + 1) * self.n_systems)

    def counts(self):
        c = {
            "states": self.n_steps * self.nx,
            "inputs": self.n_steps * self.nu,
            "splits": 2 * self.n_steps * self.nu,
            "surrogates": self.n_steps * self.n_systems,
            "terminal_splits": 2 * self.nx + 2 * self.nu,
            "slacks": 2,
        }
        if self.off_h >= 0:
            c["hinges"] = self.n_steps * self.n_systems
        if self.off_ut >= 0:
            c["budgets"] = self.n_steps
        return c


def _make_layout(n, m, n_sys, horizon, hinge, in_horizon):
    nx, nu = n * n_sys, m * n_sys
    k_steps = horizon + 1
    off = 0
    off_x = off; off += k_steps * nx
    off_u = off; off += k_steps * nu
    off_up = off; off += k_steps * nu
    off_um = off; off += k_steps * nu
    off_s = off; off += k_steps * n_sys
    off_vp = off; off += nx
    off_vm = off; off += nx
    off_wp = off; off += nu
    off_wm = off; off += nu
    off_eps = off; off += 2
    off_h = -1
    if hinge:
        off_h = off; off += k_steps * n_sys
    off_ut = -1
    if in_horizon:
        off_ut = off; off += k_steps
    return VariableLayout(n=n, m=m, n_systems=n_sys, horizon=horizon,
                          off_x=off_x, off_u=off_u, off_up=off_up,
                          off_um=off_um, off_s=off_s, off_vp=off_vp,
                          off_vm=off_vm, off_wp=off_wp, off_wm=off_wm,
                          off_eps=off_eps, off_h=off_h, off_ut=off_ut,
                          n_vars=off)


class _Triplets:
    """Tiny COO accumulator."""

    def __init__(self):
        self.rows = []
        self.cols = []
        self.vals = []

    def add_dense(self, row0, col0, block):
        block = np.atleast_2d(block)
        r, c = np.nonzero(block)
        self.rows.append(r + row0)
        self.cols.append(c + col0)
        self.vals.append(block[r, c])

    def add_diag(self, row0, col0, values):
        values = np.atleast_1d(values)
        idx = np.arange(len(values))
        self.rows.append(idx + row0)
        self.cols.append(idx + col0)
        self.vals.append(np.asarray(values, dtype=float))

    def add_entries(self, rows, cols, vals):
        rows = np.atleast_1d(rows)
        self.rows.append(np.asarray(rows, dtype=int))
        self.cols.append(np.asarray(np.atleast_1d(cols), dtype=int))
        self.vals.append(np.broadcast_to(np.asarray(vals, dtype=float),
                                         rows.shape).copy())

    def build(self, shape):
        if not self.rows:
            return sp.csc_matrix(shape)
        rows = np.concatenate(self.rows)
        cols = np.concatenate(self.cols)
        vals = np.concatenate(self.vals)
        return sp.coo_matrix((vals, (rows, cols)), shape=shape).tocsc()


@dataclass(frozen=True)
class OcpInstance:
    """Transcribed finite-horizon problem plus its QP blocks.

    ``p_matrix``/``a_matrix`` are fixed for a given scenario-and-weights
    pair; ``with_updates`` rebinds the measured state and the current budget
    without touching the factorizable structure (``structure_key`` flags
    reusability to the solver).
    """
    layout: VariableLayout
    p_matrix: sp.csc_matrix
    q_base: np.ndarray
    a_matrix: sp.csc_matrix
    l_bounds: np.ndarray
    u_bounds: np.ndarray
    x_now: np.ndarray
    u_bar: float
    share: float
    rho_stage: np.ndarray        # (K, N): rho_i for k<L, beta*rho_i at k=L
    rho_eff: np.ndarray          # (N,)
    w_eff: tuple
    q_tilde: np.ndarray
    ensemble_a: np.ndarray
    ensemble_b: np.ndarray
    x_target: np.ndarray
    u_target: np.ndarray
    beta: float
    lambda_x: float
    lambda_u: float
    equality_mode: str
    budget_in_horizon: bool
    rows_init: slice
    rows_alloc: slice
    rows_hinge: Optional[slice]
    structure_key: int
    q_stack: np.ndarray = None
    w_stack: np.ndarray = None
    cost_kind: str = "fair"

    # -- derived -----------------------------------------------------------

    def variable_counts(self):
        return self.layout.counts()

    def true_cost(self, states, inputs, slacks=None) -> CostBreakdown:
        """Exact cost of a trajectory pair at this instance's weights and
        budget, evaluated on true input 1-norms (never the surrogates)."""
        states = np.asarray(states, dtype=float)
        inputs = np.asarray(inputs, dtype=float)
        lay = self.layout
        if states.shape != (lay.n_steps, lay.nx) \
                or inputs.shape != (lay.n_steps, lay.nu):
            raise ValueError("trajectory shapes do not match the layout")
        return _cost_terms(states, inputs, self.x_target, self.u_target,
                           self.q_stack, self.w_stack, self.rho_eff,
                           self.share, self.beta, self.lambda_x,
                           self.lambda_u, slacks)

    def with_updates(self, x_now, u_bar):
        """Same structure, new measured state and budget."""
        x_now = np.asarray(x_now, dtype=float)
        u_bar = float(u_bar)
        if u_bar < 0:
            raise ValueError("budget must be nonnegative")
        l = self.l_bounds.copy()
        u = self.u_bounds.copy()
        l[self.rows_init] = x_now
        u[self.rows_init] = x_now
        share = u_bar / self.layout.n_systems
        if self.budget_in_horizon:
            # first row of the block pins the initial in-horizon budget
            l[self.rows_alloc.start] = u_bar
            u[self.rows_alloc.start] = u_bar
        else:
            u[self.rows_alloc] = u_bar
        if self.rows_hinge is not None:
            u[self.rows_hinge] = share
        return replace(self, x_now=x_now, u_bar=u_bar, share=share,
                       l_bounds=l, u_bounds=u)

    # -- per-iteration cost vectors -----------------------------------------

    def q_vector(self, sign_pattern=None, tightness_weight=0.0):
        """Linear cost for one convex subproblem.

        ``sign_pattern`` is the (K, nu) array of input signs used to
        linearize the concave part of the even-split penalty; ``None``
        selects the surrogate-effort quadratic ``rho (s - share)^2`` as is
        (used for the first pass and by the hinge mode, where the linear
        part lives on the surrogate efforts / is absent).
        """
        lay = self.layout
        q = self.q_base.copy()
        if self.cost_kind != "fair" or self.equality_mode == EQUALITY_HINGE:
            return q
        k_steps = lay.n_steps
        if sign_pattern is None:
            coeff = (-2.0 * self.rho_stage * self.share).ravel()
            q[lay.off_s:lay.off_s + k_steps * lay.n_systems] += coeff
            return q
        sigma = np.asarray(sign_pattern, dtype=float).reshape(k_steps, lay.nu)
        # -2 rho share sigma' u per system and step
        w = np.repeat(self.rho_stage, lay.m, axis=1)  # (K, nu)
        q[lay.off_u:lay.off_u + k_steps * lay.nu] += \
            (-2.0 * w * self.share * sigma).ravel()
        if tightness_weight > 0.0:
            flat = sigma.ravel()
            up0 = lay.off_up
            um0 = lay.off_um
            pos = np.flatnonzero(flat > 0)
            neg = np.flatnonzero(flat < 0)
            q[um0 + pos] += tightness_weight
            q[up0 + neg] += tightness_weight
        return q

    # -- extraction ----------------------------------------------------------

    def extract(self, z):
        lay = self.layout
        k_steps = lay.n_steps
        states = z[lay.off_x:lay.off_x + k_steps * lay.nx].reshape(k_steps, lay.nx)
        inputs = z[lay.off_u:lay.off_u + k_steps * lay.nu].reshape(k_steps, lay.nu)
        up = z[lay.off_up:lay.off_up + k_steps * lay.nu].reshape(k_steps, lay.nu)
        um = z[lay.off_um:lay.off_um + k_steps * lay.nu].reshape(k_steps, lay.nu)
        s = z[lay.off_s:lay.off_s + k_steps * lay.n_systems].reshape(
            k_steps, lay.n_systems)
        eps_x = float(z[lay.off_eps])
        eps_u = float(z[lay.off_eps + 1])
        return states, inputs, up, um, s, eps_x, eps_u


def _stack_w(w_eff, n):
    return np.stack([np.atleast_2d(w) for w in w_eff])


def _cost_terms(states, inputs, x_s, u_s, q_stack, w_stack, rho_eff, share,
                beta, lambda_x, lambda_u, slacks=None) -> CostBreakdown:
    """Core true-cost arithmetic shared by the scenario- and instance-level
    evaluators. Shapes: states (L+1, nN), inputs (L+1, mN)."""
    k_total = states.shape[0]
    horizon = k_total - 1
    n_sys = q_stack.shape[0]
    n = q_stack.shape[1]
    m = inputs.shape[1] // n_sys
    err = (states - x_s).reshape(k_total, n_sys, n)
    u_norms = np.abs(inputs.reshape(k_total, n_sys, m)).sum(axis=2)

    track_k = np.einsum("kin,inm,kim->k", err, q_stack, err)
    dev = err - err.mean(axis=1, keepdims=True)
    equity_k = np.einsum("kin,inm,kim->k", dev, w_stack, dev)
    equal_k = (rho_eff * (u_norms - share) ** 2).sum(axis=1)

    j_p = float(track_k[:horizon].sum())
    j_e = float(equity_k[:horizon].sum())
    j_u = float(equal_k[:horizon].sum())
    terminal = float(beta * (track_k[horizon] + equity_k[horizon]
                             + equal_k[horizon]))
    if slacks is None:
        eps_x = float(np.abs(states[horizon] - x_s).sum())
        eps_u = float(np.abs(inputs[horizon] - u_s).sum())
    else:
        eps_x, eps_u = float(slacks[0]), float(slacks[1])
    slack_penalty = lambda_x * eps_x ** 2 + lambda_u * eps_u ** 2
    total = j_p + j_u + j_e + terminal + slack_penalty
    return CostBreakdown(j_p=j_p, j_u=j_u, j_e=j_e, terminal_v=terminal,
                         slack_penalty=slack_penalty, total=total)


def eval_cost_terms(states, inputs, scenario: Scenario, u_bar_t,
                    weights=None, slacks=None) -> CostBreakdown:
    """Exact cost of a trajectory pair, with true input 1-norms.

    ``states``/``inputs`` hold L+1 stacked vectors each. When ``slacks`` is
    omitted the minimal feasible slack values (the actual terminal 1-norm
    gaps) are used.
    """
    w_set = weights if weights is not None else scenario.weights
    states = np.asarray(states, dtype=float)
    inputs = np.asarray(inputs, dtype=float)
    horizon = scenario.horizon_l
    n_sys, n, m = scenario.n_systems, scenario.n, scenario.m
    if states.shape != (horizon + 1, n * n_sys):
        raise ValueError(f"states must have shape {(horizon + 1, n * n_sys)}, "
                         f"got {states.shape}")
    if inputs.shape != (horizon + 1, m * n_sys):
        raise ValueError(f"inputs must have shape {(horizon + 1, m * n_sys)}, "
                         f"got {inputs.shape}")
    rho_eff, w_eff = expand_class_weights(scenario, w_set)
    x_s = np.concatenate([t.x_s for t in scenario.targets])
    u_s = np.concatenate([t.u_s for t in scenario.targets])
    share = float(u_bar_t) / n_sys
    q_stack = np.stack([np.atleast_2d(q) for q in w_set.q_weights])
    w_stack = _stack_w(w_eff, n)
    return _cost_terms(states, inputs, x_s, u_s, q_stack, w_stack, rho_eff,
                       share, w_set.beta, w_set.lambda_x, w_set.lambda_u,
                       slacks)


def _assemble_common(scenario, x_t, u_bar_t, weights, hinge, in_horizon):
    """Constraint matrix, bounds and layout shared by both cost kinds."""
    ens = build_ensemble(scenario)
    n, m, n_sys = ens.n, ens.m, ens.n_systems
    nx, nu = n * n_sys, m * n_sys
    horizon = scenario.horizon_l
    k_steps = horizon + 1
    lay = _make_layout(n, m, n_sys, horizon, hinge, in_horizon)
    x_t = np.asarray(x_t, dtype=float)
    if x_t.shape != (nx,):
        raise ValueError(f"measured state must have shape ({nx},)")
    u_bar_t = float(u_bar_t)
    if u_bar_t < 0:
        raise ValueError("budget must be nonnegative")
    share = u_bar_t / n_sys

    trip = _Triplets()
    l_parts, u_parts = [], []
    row = 0

    def rows(count):
        nonlocal row
        start = row
        row += count
        return start

    # initial condition
    r_init = rows(nx)
    trip.add_diag(r_init, lay.off_x, np.ones(nx))
    l_parts.append(x_t.copy())
    u_parts.append(x_t.copy())

    # dynamics
    neg_a = -ens.a
    neg_b = -ens.b
    for k in range(horizon):
        r = rows(nx)
        trip.add_dense(r, lay.x_k(k).start, neg_a)
        trip.add_diag(r, lay.x_k(k + 1).start, np.ones(nx))
        trip.add_dense(r, lay.u_k(k).start, neg_b)
        l_parts.append(np.zeros(nx))
        u_parts.append(np.zeros(nx))

    # terminal equilibrium
    r = rows(nx)
    trip.add_dense(r, lay.x_k(horizon).start, np.eye(nx) - ens.a)
    trip.add_dense(r, lay.u_k(horizon).start, neg_b)
    l_parts.append(np.zeros(nx))
    u_parts.append(np.zeros(nx))

    # split link u = u+ - u-
    for k in range(k_steps):
        r = rows(nu)
        trip.add_diag(r, lay.u_k(k).start, np.ones(nu))
        trip.add_diag(r, lay.up_k(k).start, -np.ones(nu))
        trip.add_diag(r, lay.um_k(k).start, np.ones(nu))
        l_parts.append(np.zeros(nu))
        u_parts.append(np.zeros(nu))

    # surrogate effort definition s^i = 1'(u+ + u-)
    for k in range(k_steps):
        r = rows(n_sys)
        trip.add_diag(r, lay.s_k(k).start, np.ones(n_sys))
        for i in range(n_sys):
            cols_up = np.arange(lay.up_k(k).start + i * m,
                                lay.up_k(k).start + (i + 1) * m)
            cols_um = np.arange(lay.um_k(k).start + i * m,
                                lay.um_k(k).start + (i + 1) * m)
            trip.add_entries(np.full(m, r + i), cols_up, -1.0)
            trip.add_entries(np.full(m, r + i), cols_um, -1.0)
        l_parts.append(np.zeros(n_sys))
        u_parts.append(np.zeros(n_sys))

    # allocation
    if not in_horizon:
        r_alloc = rows(k_steps)
        for k in range(k_steps):
            cols = np.arange(lay.s_k(k).start, lay.s_k(k).stop)
            trip.add_entries(np.full(n_sys, r_alloc + k), cols, 1.0)
        l_parts.append(np.full(k_steps, -np.inf))
        u_parts.append(np.full(k_steps, u_bar_t))
        rows_alloc = slice(r_alloc, r_alloc + k_steps)
    else:
        # budget recursion: Ut_0 = u_bar; Ut_{k+1} = Ut_k - sum_i s^i_k
        r_alloc = rows(1 + horizon + 1)
        trip.add_entries(r_alloc, lay.off_ut, 1.0)
        l_parts.append(np.array([u_bar_t]))
        u_parts.append(np.array([u_bar_t]))
        for k in range(horizon):
            rr = r_alloc + 1 + k
            trip.add_entries(rr, lay.off_ut + k + 1, 1.0)
            trip.add_entries(rr, lay.off_ut + k, -1.0)
            cols = np.arange(lay.s_k(k).start, lay.s_k(k).stop)
            trip.add_entries(np.full(n_sys, rr), cols, 1.0)
        l_parts.append(np.zeros(horizon))
        u_parts.append(np.zeros(horizon))
        rr = r_alloc + 1 + horizon
        cols = np.arange(lay.s_k(horizon).start, lay.s_k(horizon).stop)
        trip.add_entries(np.full(n_sys, rr), cols, 1.0)
        trip.add_entries(rr, lay.off_ut + horizon, -1.0)
        l_parts.append(np.array([-np.inf]))
        u_parts.append(np.array([0.0]))
        rows_alloc = slice(r_alloc, r_alloc + 1 + horizon + 1)

    # local polytopes
    for i, pset in enumerate(scenario.input_sets):
        if pset.n_rows == 0:
            continue
        for k in range(k_steps):
            r = rows(pset.n_rows)
            trip.add_dense(r, lay.u_k(k).start + i * m, pset.h_matrix)
            l_parts.append(np.full(pset.n_rows, -np.inf))
            u_parts.append(np.asarray(pset.h_vector))
    for i, pset in enumerate(scenario.state_sets):
        if pset.n_rows == 0:
            continue
        for k in range(k_steps):
            r = rows(pset.n_rows)
            trip.add_dense(r, lay.x_k(k).start + i * n, pset.h_matrix)
            l_parts.append(np.full(pset.n_rows, -np.inf))
            u_parts.append(np.asarray(pset.h_vector))

    # terminal deviation splits: x_L - x_s = v+ - v-, u_L - u_s = w+ - w-
    r = rows(nx)
    trip.add_diag(r, lay.x_k(horizon).start, np.ones(nx))
    trip.add_diag(r, lay.off_vp, -np.ones(nx))
    trip.add_diag(r, lay.off_vm, np.ones(nx))
    l_parts.append(ens.x_s.copy())
    u_parts.append(ens.x_s.copy())
    r = rows(nu)
    trip.add_diag(r, lay.u_k(horizon).start, np.ones(nu))
    trip.add_diag(r, lay.off_wp, -np.ones(nu))
    trip.add_diag(r, lay.off_wm, np.ones(nu))
    l_parts.append(ens.u_s.copy())
    u_parts.append(ens.u_s.copy())

    # terminal 1-norm bounds through the slacks
    r = rows(2)
    cols_v = np.arange(lay.off_vp, lay.off_vm + nx)
    trip.add_entries(np.full(2 * nx, r), cols_v, 1.0)
    trip.add_entries(r, lay.off_eps, -1.0)
    cols_w = np.arange(lay.off_wp, lay.off_wm + nu)
    trip.add_entries(np.full(2 * nu, r + 1), cols_w, 1.0)
    trip.add_entries(r + 1, lay.off_eps + 1, -1.0)
    l_parts.append(np.full(2, -np.inf))
    u_parts.append(np.zeros(2))

    # nonnegativity
    nonneg_cols = [np.arange(lay.off_up, lay.off_um + k_steps * nu),
                   np.arange(lay.off_vp, lay.off_vm + nx),
                   np.arange(lay.off_wp, lay.off_wm + nu),
                   np.arange(lay.off_eps, lay.off_eps + 2)]
    if hinge:
        nonneg_cols.append(np.arange(lay.off_h, lay.off_h + k_steps * n_sys))
    if in_horizon:
        nonneg_cols.append(np.arange(lay.off_ut, lay.off_ut + k_steps))
    nonneg = np.concatenate(nonneg_cols)
    r = rows(len(nonneg))
    trip.add_entries(np.arange(r, r + len(nonneg)), nonneg, 1.0)
    l_parts.append(np.zeros(len(nonneg)))
    u_parts.append(np.full(len(nonneg), np.inf))

    rows_hinge = None
    if hinge:
        r = rows(k_steps * n_sys)
        idx = np.arange(k_steps * n_sys)
        trip.add_entries(r + idx, lay.off_s + idx, 1.0)
        trip.add_entries(r + idx, lay.off_h + idx, -1.0)
        l_parts.append(np.full(k_steps * n_sys, -np.inf))
        u_parts.append(np.full(k_steps * n_sys, share))
        rows_hinge = slice(r, r + k_steps * n_sys)

    a_matrix = trip.build((row, lay.n_vars))
    l_bounds = np.concatenate(l_parts)
    u_bounds = np.concatenate(u_parts)
    return (ens, lay, a_matrix, l_bounds, u_bounds,
            slice(r_init, r_init + nx), rows_alloc, rows_hinge, share)


def assemble_ocp(scenario: Scenario, x_t, u_bar_t, active_weights=None,
                 budget_in_horizon=False,
                 equality_mode=EQUALITY_DC) -> OcpInstance:
    """Transcribe the fairness-aware problem at the measured state ``x_t``."""
    if equality_mode not in (EQUALITY_DC, EQUALITY_HINGE):
        raise ValueError(f"unknown equality formulation {equality_mode!r}")
    w_set = active_weights if active_weights is not None else scenario.weights
    hinge = equality_mode == EQUALITY_HINGE
    (ens, lay, a_matrix, l_bounds, u_bounds, rows_init, rows_alloc,
     rows_hinge, share) = _assemble_common(scenario, x_t, u_bar_t, w_set,
                                           hinge, budget_in_horizon)
    n_sys = lay.n_systems
    horizon = lay.horizon
    k_steps = lay.n_steps

    rho_eff, w_eff = expand_class_weights(scenario, w_set)
    q_tilde = EquivalentWeights.build(w_set.q_weights, w_eff).q_tilde

    rho_stage = np.tile(rho_eff, (k_steps, 1))
    rho_stage[horizon] *= w_set.beta

    ptrip = _Triplets()
    q_base = np.zeros(lay.n_vars)
    q2 = 2.0 * q_tilde
    for k in range(k_steps):
        scale = w_set.beta if k == horizon else 1.0
        ptrip.add_dense(lay.x_k(k).start, lay.x_k(k).start, scale * q2)
        q_base[lay.x_k(k)] = -scale * q2 @ ens.x_s
    if hinge:
        ptrip.add_diag(lay.off_h, lay.off_h, 2.0 * rho_stage.ravel())
    else:
        ptrip.add_diag(lay.off_s, lay.off_s, 2.0 * rho_stage.ravel())
    ptrip.add_diag(lay.off_eps, lay.off_eps,
                   np.array([2.0 * w_set.lambda_x, 2.0 * w_set.lambda_u]))
    p_matrix = ptrip.build((lay.n_vars, lay.n_vars))

    return OcpInstance(layout=lay, p_matrix=p_matrix, q_base=q_base,
                       a_matrix=a_matrix, l_bounds=l_bounds, u_bounds=u_bounds,
                       x_now=np.asarray(x_t, dtype=float), u_bar=float(u_bar_t),
                       share=share, rho_stage=rho_stage, rho_eff=rho_eff,
                       w_eff=w_eff, q_tilde=q_tilde, ensemble_a=ens.a,
                       ensemble_b=ens.b, x_target=ens.x_s, u_target=ens.u_s,
                       beta=w_set.beta, lambda_x=w_set.lambda_x,
                       lambda_u=w_set.lambda_u, equality_mode=equality_mode,
                       budget_in_horizon=budget_in_horizon,
                       rows_init=rows_init, rows_alloc=rows_alloc,
                       rows_hinge=rows_hinge,
                       structure_key=next(_structure_counter),
                       q_stack=np.stack([np.atleast_2d(q)
                                         for q in w_set.q_weights]),
                       w_stack=_stack_w(w_eff, lay.n),
                       cost_kind="fair")


def assemble_tracking_mpc(scenario: Scenario, x_t, u_bar_t,
                          active_weights=None, r_matrices=None,
                          budget_in_horizon=False) -> OcpInstance:
    """Quadratic-tracking variant: same constraints and terminal slacks, the
    even-split penalty replaced by ||u^i - u_s^i||_R with R^i = m rho^i I
    (or caller-supplied R blocks; R = 0 gives a plain tracking law)."""
    w_set = active_weights if active_weights is not None else scenario.weights
    (ens, lay, a_matrix, l_bounds, u_bounds, rows_init, rows_alloc,
     rows_hinge, share) = _assemble_common(scenario, x_t, u_bar_t, w_set,
                                           False, budget_in_horizon)
    n_sys = lay.n_systems
    horizon = lay.horizon
    k_steps = lay.n_steps
    m = lay.m

    rho_eff, w_eff = expand_class_weights(scenario, w_set)
    q_tilde = EquivalentWeights.build(w_set.q_weights, w_eff).q_tilde
    if r_matrices is None:
        r_matrices = [m * rho_eff[i] * np.eye(m) for i in range(n_sys)]
    r_diag = np.concatenate([np.diag(np.atleast_2d(r)) for r in r_matrices])
    r_full = np.zeros((lay.nu, lay.nu))
    for i, r_blk in enumerate(r_matrices):
        r_full[i * m:(i + 1) * m, i * m:(i + 1) * m] = np.atleast_2d(r_blk)

    ptrip = _Triplets()
    q_base = np.zeros(lay.n_vars)
    q2 = 2.0 * q_tilde
    for k in range(k_steps):
        scale = w_set.beta if k == horizon else 1.0
        ptrip.add_dense(lay.x_k(k).start, lay.x_k(k).start, scale * q2)
        q_base[lay.x_k(k)] = -scale * q2 @ ens.x_s
        ptrip.add_dense(lay.u_k(k).start, lay.u_k(k).start, scale * 2.0 * r_full)
        q_base[lay.u_k(k)] = -scale * 2.0 * (r_full @ ens.u_s)
    ptrip.add_diag(lay.off_eps, lay.off_eps,
                   np.array([2.0 * w_set.lambda_x, 2.0 * w_set.lambda_u]))
    p_matrix = ptrip.build((lay.n_vars, lay.n_vars))

    rho_stage = np.tile(rho_eff, (k_steps, 1))
    rho_stage[horizon] *= w_set.beta
    return OcpInstance(layout=lay, p_matrix=p_matrix, q_base=q_base,
                       a_matrix=a_matrix, l_bounds=l_bounds, u_bounds=u_bounds,
                       x_now=np.asarray(x_t, dtype=float), u_bar=float(u_bar_t),
                       share=share, rho_stage=rho_stage, rho_eff=rho_eff,
                       w_eff=w_eff, q_tilde=q_tilde, ensemble_a=ens.a,
                       ensemble_b=ens.b, x_target=ens.x_s, u_target=ens.u_s,
                       beta=w_set.beta, lambda_x=w_set.lambda_x,
                       lambda_u=w_set.lambda_u, equality_mode=EQUALITY_DC,
                       budget_in_horizon=budget_in_horizon,
                       rows_init=rows_init, rows_alloc=rows_alloc,
                       rows_hinge=rows_hinge,
                       structure_key=next(_structure_counter),
                       q_stack=np.stack([np.atleast_2d(q)
                                         for q in w_set.q_weights]),
                       w_stack=_stack_w(w_eff, lay.n),
                       cost_kind="tracking")

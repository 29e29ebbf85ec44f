"""System models, targets, constraint sets, budgets and scenarios.

All types are immutable after construction (arrays are marked read-only), so
they can be shared freely across threads; the operations are pure functions.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

STABILIZABILITY_TOL = 1e-9
EQUILIBRIUM_TOL = 1e-8
INTERIOR_MARGIN = 1e-9

BUDGET_CONSTANT = "constant"
BUDGET_DEPLETING = "depleting"
BUDGET_DEPLETING_IN_HORIZON = "depleting-in-horizon"
BUDGET_MODES = (BUDGET_CONSTANT, BUDGET_DEPLETING, BUDGET_DEPLETING_IN_HORIZON)


class EquilibriumInfeasibleError(ValueError):
    """No exact equilibrium input exists for the requested state."""

    def __init__(self, residual):
        self.residual = float(residual)
        super().__init__(
            f"no equilibrium input: least-squares residual {residual:.3e} "
            f"exceeds {EQUILIBRIUM_TOL:.0e}")


def _frozen(arr, dtype=float):
    out = np.array(arr, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class LtiSystem:
    """Discrete-time LTI plant x+ = A x + B u."""
    a_matrix: np.ndarray
    b_matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        a = _frozen(np.atleast_2d(self.a_matrix))
        b = _frozen(np.atleast_2d(self.b_matrix))
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"state matrix must be square, got {a.shape}")
        if b.shape[0] != a.shape[0]:
            raise ValueError(
                f"input matrix has {b.shape[0]} rows, expected {a.shape[0]}")
        object.__setattr__(self, "a_matrix", a)
        object.__setattr__(self, "b_matrix", b)

    @property
    def n(self):
        return self.a_matrix.shape[0]

    @property
    def m(self):
        return self.b_matrix.shape[1]

    def is_stabilizable(self, tol=STABILIZABILITY_TOL):
        """PBH test: every eigenvalue with |lam| >= 1 must keep
        [A - lam*I | B] at full row rank."""
        a, b = self.a_matrix, self.b_matrix
        n = self.n
        for lam in np.linalg.eigvals(a):
            if abs(lam) < 1.0 - tol:
                continue
            test = np.hstack([a - lam * np.eye(n), b]).astype(complex)
            rank = np.linalg.matrix_rank(test, tol=tol)
            if rank < n:
                return False
        return True


@dataclass(frozen=True)
class EquilibriumTarget:
    """Steady state / steady input pair x_s = A x_s + B u_s."""
    x_s: np.ndarray
    u_s: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x_s", _frozen(np.atleast_1d(self.x_s)))
        object.__setattr__(self, "u_s", _frozen(np.atleast_1d(self.u_s)))

    def residual(self, system: LtiSystem):
        return float(np.linalg.norm(
            self.x_s - system.a_matrix @ self.x_s - system.b_matrix @ self.u_s,
            ord=1))


@dataclass(frozen=True)
class PolytopeSet:
    """Polyhedron { z : H z <= h }; an empty H means the whole space."""
    h_matrix: np.ndarray
    h_vector: np.ndarray

    def __post_init__(self):
        hm = np.array(self.h_matrix, dtype=float)
        hv = np.atleast_1d(np.array(self.h_vector, dtype=float))
        if hm.size == 0:
            hm = hm.reshape(0, hm.shape[1] if hm.ndim == 2 else 0)
        hm = np.atleast_2d(hm) if hm.size else hm
        if hm.shape[0] != hv.shape[0]:
            raise ValueError("H and h row counts differ")
        object.__setattr__(self, "h_matrix", _frozen(hm))
        object.__setattr__(self, "h_vector", _frozen(hv))

    @classmethod
    def unconstrained(cls, dim):
        return cls(np.zeros((0, dim)), np.zeros(0))

    @property
    def n_rows(self):
        return self.h_matrix.shape[0]

    def contains(self, z, tol=0.0):
        if self.n_rows == 0:
            return True
        return bool(np.all(self.h_matrix @ np.asarray(z) <= self.h_vector + tol))

    def strictly_contains(self, z, margin=INTERIOR_MARGIN):
        if self.n_rows == 0:
            return True
        return bool(np.all(self.h_matrix @ np.asarray(z)
                           <= self.h_vector - margin))


@dataclass(frozen=True)
class BudgetPolicy:
    """How the shared effort bound evolves over the simulation."""
    mode: str
    u_bar_0: float

    def __post_init__(self):
        if self.mode not in BUDGET_MODES:
            raise ValueError(f"unknown budget mode {self.mode!r}")
        if not self.u_bar_0 > 0:
            raise ValueError("initial budget must be positive")
        object.__setattr__(self, "u_bar_0", float(self.u_bar_0))


@dataclass(frozen=True)
class WeightSet:
    """Cost weights. ``rho_bar`` and ``w_bar`` may be per-system (length N)
    or per-class (length C when the scenario defines classes); the effective
    penalties are rho = gamma_u * rho_bar and W = gamma_e * w_bar."""
    q_weights: tuple
    rho_bar: tuple
    w_bar: tuple
    gamma_u: float
    gamma_e: float
    beta: float
    lambda_x: float
    lambda_u: float

    def __post_init__(self):
        qw = tuple(_frozen(np.atleast_2d(q)) for q in self.q_weights)
        wb = tuple(_frozen(np.atleast_2d(w)) for w in self.w_bar)
        rb = tuple(float(r) for r in self.rho_bar)
        for i, q in enumerate(qw):
            eigmin = float(np.linalg.eigvalsh((q + q.T) / 2).min())
            if eigmin <= 1e-12:
                raise ValueError(f"tracking weight {i} is not positive definite")
        for i, w in enumerate(wb):
            eigmin = float(np.linalg.eigvalsh((w + w.T) / 2).min())
            if eigmin < -1e-10:
                raise ValueError(f"equity weight {i} is not positive semidefinite")
        if any(r < 0 for r in rb):
            raise ValueError("equality penalties must be nonnegative")
        for name in ("gamma_u", "gamma_e"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("beta", "lambda_x", "lambda_u"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        object.__setattr__(self, "q_weights", qw)
        object.__setattr__(self, "w_bar", wb)
        object.__setattr__(self, "rho_bar", rb)

    def masked(self, rho_on: bool, w_on: bool):
        """Zero out (never drop) the fairness penalties."""
        new = self
        if not rho_on:
            new = replace(new, rho_bar=tuple(0.0 for _ in new.rho_bar))
        if not w_on:
            new = replace(new, w_bar=tuple(np.zeros_like(w) for w in new.w_bar))
        return new

    def with_bars(self, rho_bar, w_bar):
        return replace(self, rho_bar=tuple(rho_bar), w_bar=tuple(w_bar))


@dataclass(frozen=True)
class Scenario:
    """Complete problem description for one closed-loop experiment."""
    systems: tuple
    targets: tuple
    input_sets: tuple
    state_sets: tuple
    budget: BudgetPolicy
    weights: WeightSet
    horizon_l: int
    sim_steps_t: int
    initial_states: tuple
    classes: Optional[tuple] = None
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "systems", tuple(self.systems))
        object.__setattr__(self, "targets", tuple(self.targets))
        object.__setattr__(self, "input_sets", tuple(self.input_sets))
        object.__setattr__(self, "state_sets", tuple(self.state_sets))
        object.__setattr__(
            self, "initial_states",
            tuple(_frozen(np.atleast_1d(x)) for x in self.initial_states))
        if self.classes is not None:
            object.__setattr__(
                self, "classes",
                tuple(tuple(int(i) for i in grp) for grp in self.classes))
        if self.horizon_l < 1:
            raise ValueError("prediction horizon must be >= 1")
        if self.sim_steps_t < 1:
            raise ValueError("simulation length must be >= 1")

    @property
    def n_systems(self):
        return len(self.systems)

    @property
    def n(self):
        return self.systems[0].n

    @property
    def m(self):
        return self.systems[0].m

    def with_weights(self, weights: WeightSet):
        return replace(self, weights=weights)

    def stacked_initial_state(self):
        return np.concatenate(self.initial_states)


@dataclass(frozen=True)
class EnsembleModel:
    """Block-diagonal dynamics of the whole group plus stacked targets."""
    a: np.ndarray
    b: np.ndarray
    x_s: np.ndarray
    u_s: np.ndarray
    n: int
    m: int
    n_systems: int


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.violations


def build_ensemble(scenario: Scenario) -> EnsembleModel:
    """Stack the group into block-diagonal (A, B) and concatenated targets."""
    systems = scenario.systems
    n, m = systems[0].n, systems[0].m
    for idx, sysm in enumerate(systems):
        if sysm.n != n or sysm.m != m:
            raise ValueError(
                f"system {idx} has dimensions ({sysm.n}, {sysm.m}), "
                f"expected ({n}, {m})")
    n_sys = len(systems)
    a = np.zeros((n * n_sys, n * n_sys))
    b = np.zeros((n * n_sys, m * n_sys))
    for i, sysm in enumerate(systems):
        a[i * n:(i + 1) * n, i * n:(i + 1) * n] = sysm.a_matrix
        b[i * n:(i + 1) * n, i * m:(i + 1) * m] = sysm.b_matrix
    x_s = np.concatenate([t.x_s for t in scenario.targets])
    u_s = np.concatenate([t.u_s for t in scenario.targets])
    return EnsembleModel(a=a, b=b, x_s=x_s, u_s=u_s, n=n, m=m, n_systems=n_sys)


def compute_equilibrium_input(system: LtiSystem, x_s) -> np.ndarray:
    """Minimum-2-norm input solving (I - A) x_s = B u_s.

    Raises :class:`EquilibriumInfeasibleError` when no exact solution exists
    (least-squares residual above the equilibrium tolerance in 1-norm).
    """
    x_s = np.atleast_1d(np.asarray(x_s, dtype=float))
    rhs = (np.eye(system.n) - system.a_matrix) @ x_s
    u_s, *_ = np.linalg.lstsq(system.b_matrix, rhs, rcond=None)
    residual = float(np.linalg.norm(rhs - system.b_matrix @ u_s, ord=1))
    if residual > EQUILIBRIUM_TOL:
        raise EquilibriumInfeasibleError(residual)
    return u_s


def plant_step(system: LtiSystem, x, u) -> np.ndarray:
    """One true-plant update A x + B u."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if x.shape[0] != system.n:
        raise ValueError(f"state has dimension {x.shape[0]}, expected {system.n}")
    if u.shape[0] != system.m:
        raise ValueError(f"input has dimension {u.shape[0]}, expected {system.m}")
    return system.a_matrix @ x + system.b_matrix @ u


def validate_scenario(scenario: Scenario) -> ValidationReport:
    """Structural and numerical checks; returns violations and warnings."""
    rep = ValidationReport()
    n_sys = scenario.n_systems
    if not (len(scenario.targets) == len(scenario.input_sets)
            == len(scenario.state_sets) == len(scenario.initial_states) == n_sys):
        rep.violations.append("systems, targets, sets and initial states "
                              "must all have the same length")
        return rep
    n, m = scenario.systems[0].n, scenario.systems[0].m
    for i, sysm in enumerate(scenario.systems):
        if sysm.n != n or sysm.m != m:
            rep.violations.append(
                f"system {i}: dimensions ({sysm.n}, {sysm.m}) differ from "
                f"system 0 ({n}, {m})")
    if rep.violations:
        return rep

    for i, (sysm, tgt) in enumerate(zip(scenario.systems, scenario.targets)):
        if not sysm.is_stabilizable():
            rep.violations.append(f"system {i}: not stabilizable")
        res = tgt.residual(sysm)
        if res > EQUILIBRIUM_TOL:
            rep.violations.append(
                f"system {i}: equilibrium residual {res:.3e}")
        if tgt.x_s.shape[0] != n or tgt.u_s.shape[0] != m:
            rep.violations.append(f"system {i}: target dimension mismatch")
        if scenario.initial_states[i].shape[0] != n:
            rep.violations.append(f"system {i}: initial state dimension mismatch")
        if not scenario.input_sets[i].strictly_contains(tgt.u_s):
            rep.violations.append(
                f"system {i}: equilibrium input not strictly inside its set")
        if not scenario.state_sets[i].strictly_contains(tgt.x_s):
            rep.violations.append(
                f"system {i}: equilibrium state not strictly inside its set")

    if scenario.classes is not None:
        seen = [idx for grp in scenario.classes for idx in grp]
        if sorted(seen) != list(range(n_sys)):
            rep.violations.append(
                "classes must partition the system indices exactly once each")

    n_groups = (len(scenario.classes) if scenario.classes is not None else n_sys)
    if len(scenario.weights.rho_bar) not in (n_sys, n_groups):
        rep.violations.append("rho_bar length matches neither the number of "
                              "systems nor the number of classes")
    if len(scenario.weights.w_bar) not in (n_sys, n_groups):
        rep.violations.append("w_bar length matches neither the number of "
                              "systems nor the number of classes")
    if len(scenario.weights.q_weights) != n_sys:
        rep.violations.append("one tracking weight per system is required")
    else:
        for i, q in enumerate(scenario.weights.q_weights):
            if q.shape != (n, n):
                rep.violations.append(f"tracking weight {i} has shape {q.shape}")

    effort = sum(float(np.linalg.norm(t.u_s, ord=1)) for t in scenario.targets)
    if effort > scenario.budget.u_bar_0:
        rep.warnings.append(
            f"equilibrium effort {effort:g} exceeds budget "
            f"{scenario.budget.u_bar_0:g}; targets cannot be held exactly")
    return rep

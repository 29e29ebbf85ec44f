"""Built-in scenario library.

Covers the bundled experiment families: a pair of scalar plants contending
for a tight budget, the same pair with a relaxed budget for auto-tuning
studies, an open-loop-unstable pair regulated to the origin, and planar
double-integrator fleets (two vehicles and a two-class fleet of eight)
steered to individual positions.
"""
from __future__ import annotations

import numpy as np

from .model import (BUDGET_CONSTANT, BUDGET_DEPLETING, BudgetPolicy,
                    EquilibriumTarget, LtiSystem, PolytopeSet, Scenario,
                    WeightSet, compute_equilibrium_input)


def _scalar_pair(a_values, b_values, x_targets, x_init, u_bar, rho_bar,
                 gamma_u, gamma_e, name, labels=("S1", "S2")):
    systems = tuple(LtiSystem([[a]], [[b]], label=lab)
                    for a, b, lab in zip(a_values, b_values, labels))
    targets = tuple(
        EquilibriumTarget([xs], compute_equilibrium_input(sysm, [xs]))
        for sysm, xs in zip(systems, x_targets))
    weights = WeightSet(q_weights=tuple(np.eye(1) for _ in systems),
                        rho_bar=(rho_bar,) * len(systems),
                        w_bar=tuple(np.eye(1) for _ in systems),
                        gamma_u=gamma_u, gamma_e=gamma_e, beta=0.1,
                        lambda_x=0.1, lambda_u=0.1)
    return Scenario(systems=systems, targets=targets,
                    input_sets=tuple(PolytopeSet.unconstrained(1)
                                     for _ in systems),
                    state_sets=tuple(PolytopeSet.unconstrained(1)
                                     for _ in systems),
                    budget=BudgetPolicy(mode=BUDGET_CONSTANT, u_bar_0=u_bar),
                    weights=weights, horizon_l=20, sim_steps_t=20,
                    initial_states=tuple(np.array([x0]) for x0 in x_init),
                    name=name)


def two_system() -> Scenario:
    """Two stable scalar plants aiming at x = 2 under a budget that cannot
    hold both targets (the combined equilibrium effort is 14 > 10)."""
    return _scalar_pair(a_values=(0.4, 0.9), b_values=(0.1, 0.1),
                        x_targets=(2.0, 2.0), x_init=(0.0, 0.0),
                        u_bar=10.0, rho_bar=3.0, gamma_u=0.1, gamma_e=10.0,
                        name="two-system")


def two_system_u20() -> Scenario:
    """Same pair with budget 20, enough to hold both targets; the natural
    setting for the auto-tuned penalty comparison."""
    scen = _scalar_pair(a_values=(0.4, 0.9), b_values=(0.1, 0.1),
                        x_targets=(2.0, 2.0), x_init=(0.0, 0.0),
                        u_bar=20.0, rho_bar=3.0, gamma_u=0.1, gamma_e=10.0,
                        name="two-system-u20")
    return scen


def two_system_unstable() -> Scenario:
    """Stable/unstable scalar pair regulated to the origin.

    Initial states are set to (1, 1): the unstable plant (pole 1.5, gain
    0.1) then needs a sustained effort of at least 5 per unit of state to
    make progress, which fits the shared budget of 10 but keeps the
    allocation decision meaningful.
    """
    return _scalar_pair(a_values=(0.5, 1.5), b_values=(0.1, 0.1),
                        x_targets=(0.0, 0.0), x_init=(1.0, 1.0),
                        u_bar=10.0, rho_bar=1.0, gamma_u=1e-2, gamma_e=1.0,
                        name="two-system-unstable")


_MOTION_A = np.array([[1.0, 0.0, 1.0, 0.0],
                      [0.0, 1.0, 0.0, 1.0],
                      [0.0, 0.0, 1.0, 0.0],
                      [0.0, 0.0, 0.0, 1.0]])


def _motion_system(b_gains, label):
    b = np.zeros((4, 2))
    b[2, 0] = b_gains[0]
    b[3, 1] = b_gains[1]
    return LtiSystem(_MOTION_A, b, label=label)


def _motion_scenario(specs, u_bar, budget_mode, classes, name,
                     horizon=10, sim_steps=20):
    """Planar double integrators: position pair + velocity pair per system;
    every target is a standstill at an individual position."""
    systems = []
    targets = []
    for gains, position, label in specs:
        sysm = _motion_system(gains, label)
        x_s = np.array([position[0], position[1], 0.0, 0.0])
        systems.append(sysm)
        targets.append(EquilibriumTarget(x_s, np.zeros(2)))
    n_groups = len(classes) if classes is not None else len(systems)
    weights = WeightSet(q_weights=tuple(np.eye(4) for _ in systems),
                        rho_bar=(1.0,) * n_groups,
                        w_bar=tuple(np.eye(4) for _ in range(n_groups)),
                        gamma_u=0.1, gamma_e=10.0, beta=0.1,
                        lambda_x=0.1, lambda_u=0.1)
    return Scenario(systems=tuple(systems), targets=tuple(targets),
                    input_sets=tuple(PolytopeSet.unconstrained(2)
                                     for _ in systems),
                    state_sets=tuple(PolytopeSet.unconstrained(4)
                                     for _ in systems),
                    budget=BudgetPolicy(mode=budget_mode, u_bar_0=u_bar),
                    weights=weights, horizon_l=horizon, sim_steps_t=sim_steps,
                    initial_states=tuple(np.zeros(4) for _ in systems),
                    classes=classes, name=name)


def motion_two_system() -> Scenario:
    """One weakly-actuated and one strongly-actuated vehicle, uniform
    per-step budget of 20."""
    specs = [((0.2, 0.2), (10.0, -13.0), "refrained"),
             ((1.0, 1.0), (-7.0, 2.0), "influenced")]
    return _motion_scenario(specs, u_bar=20.0, budget_mode=BUDGET_CONSTANT,
                            classes=None, name="motion-two-system")


def motion_two_system_depleting() -> Scenario:
    """Same pair with an exhaustible budget of 200 shared over the run."""
    specs = [((0.2, 0.2), (10.0, -13.0), "refrained"),
             ((1.0, 1.0), (-7.0, 2.0), "influenced")]
    return _motion_scenario(specs, u_bar=200.0, budget_mode=BUDGET_DEPLETING,
                            classes=None,
                            name="motion-two-system-depleting")


def motion_two_class() -> Scenario:
    """Eight vehicles in two actuation classes (four weak, four strong),
    class-based fairness penalties, uniform budget of 200."""
    specs = [((0.2, 0.2), (10.0, -13.0), "sys1"),
             ((0.19, 0.19), (-7.0, 2.0), "sys2"),
             ((0.194, 0.194), (6.0, 3.0), "sys3"),
             ((0.186, 0.186), (8.0, -4.0), "sys4"),
             ((1.0, 1.0), (2.0, -5.0), "sys5"),
             ((0.95, 0.95), (1.0, 2.0), "sys6"),
             ((0.97, 0.97), (-10.0, -13.0), "sys7"),
             ((0.93, 0.93), (-4.0, -1.0), "sys8")]
    classes = ((0, 1, 2, 3), (4, 5, 6, 7))
    return _motion_scenario(specs, u_bar=200.0, budget_mode=BUDGET_CONSTANT,
                            classes=classes, name="motion-two-class")


PRESETS = {
    "two-system": two_system,
    "two-system-u20": two_system_u20,
    "two-system-unstable": two_system_unstable,
    "motion-two-system": motion_two_system,
    "motion-two-system-depleting": motion_two_system_depleting,
    "motion-two-class": motion_two_class,
}


def get_preset(name: str) -> Scenario:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: "
                       f"{', '.join(sorted(PRESETS))}") from None
    return factory()

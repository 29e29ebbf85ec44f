import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fairmpc.model import (BudgetPolicy, EquilibriumInfeasibleError,
                           LtiSystem, PolytopeSet,
                           Scenario, WeightSet, build_ensemble,
                           compute_equilibrium_input, plant_step,
                           validate_scenario)
from fairmpc.presets import get_preset, motion_two_system


def test_lti_system_dimension_checks():
    with pytest.raises(ValueError):
        LtiSystem([[1.0, 0.0]], [[1.0]])
    with pytest.raises(ValueError):
        LtiSystem([[1.0]], [[1.0], [0.0]])


def test_stabilizability_pbh():
    assert LtiSystem([[0.4]], [[0.1]]).is_stabilizable()
    assert LtiSystem([[1.5]], [[0.1]]).is_stabilizable()
    # unstable mode with no input authority
    a = [[1.5, 0.0], [0.0, 0.5]]
    b = [[0.0], [1.0]]
    assert not LtiSystem(a, b).is_stabilizable()
    # stable mode uncontrollable is fine
    b2 = [[1.0], [0.0]]
    assert LtiSystem([[0.5, 0.0], [0.0, 0.9]], b2).is_stabilizable()


def test_equilibrium_input_scalar_cases():
    # (1 - a) x / b by hand
    sys1 = LtiSystem([[0.4]], [[0.1]])
    assert compute_equilibrium_input(sys1, [2.0]) == pytest.approx([12.0])
    sys2 = LtiSystem([[0.9]], [[0.1]])
    assert compute_equilibrium_input(sys2, [2.0]) == pytest.approx([2.0])


def test_equilibrium_input_motion_standstill():
    scen = motion_two_system()
    for sysm, tgt in zip(scen.systems, scen.targets):
        u_s = compute_equilibrium_input(sysm, tgt.x_s)
        assert np.allclose(u_s, 0.0, atol=1e-12)


def test_equilibrium_infeasible_report():
    # state with nonzero velocity cannot be held: no exact equilibrium input
    scen = motion_two_system()
    sysm = scen.systems[0]
    with pytest.raises(EquilibriumInfeasibleError) as exc:
        compute_equilibrium_input(sysm, [1.0, 0.0, 1.0, 0.0])
    assert exc.value.residual > 1e-8


def test_plant_step_cases():
    sys1 = LtiSystem([[0.4]], [[0.1]])
    assert plant_step(sys1, [0.0], [10.0]) == pytest.approx([1.0])
    # equilibrium is a fixed point
    x_s, u_s = np.array([2.0]), np.array([12.0])
    assert plant_step(sys1, x_s, u_s) == pytest.approx(x_s)
    scen = motion_two_system()
    influenced = scen.systems[1]
    out = plant_step(influenced, np.zeros(4), [2.0, -5.0])
    assert out == pytest.approx([0.0, 0.0, 2.0, -5.0])
    with pytest.raises(ValueError):
        plant_step(sys1, [0.0, 0.0], [1.0])


def test_build_ensemble_single_system_identity():
    scen = get_preset("two-system")
    single = Scenario(systems=scen.systems[:1], targets=scen.targets[:1],
                      input_sets=scen.input_sets[:1],
                      state_sets=scen.state_sets[:1], budget=scen.budget,
                      weights=WeightSet(q_weights=(np.eye(1),),
                                        rho_bar=(3.0,), w_bar=(np.eye(1),),
                                        gamma_u=0.1, gamma_e=10.0, beta=0.1,
                                        lambda_x=0.1, lambda_u=0.1),
                      horizon_l=scen.horizon_l, sim_steps_t=scen.sim_steps_t,
                      initial_states=scen.initial_states[:1])
    ens = build_ensemble(single)
    assert np.array_equal(ens.a, scen.systems[0].a_matrix)
    assert np.array_equal(ens.b, scen.systems[0].b_matrix)


def test_build_ensemble_two_scalar_systems():
    scen = get_preset("two-system")
    ens = build_ensemble(scen)
    assert np.array_equal(ens.a, np.diag([0.4, 0.9]))
    assert np.array_equal(ens.b, np.diag([0.1, 0.1]))
    assert ens.u_s == pytest.approx([12.0, 2.0])


def test_build_ensemble_motion_block_diagonal():
    scen = motion_two_system()
    ens = build_ensemble(scen)
    assert ens.a.shape == (8, 8)
    assert np.array_equal(ens.a[:4, :4], scen.systems[0].a_matrix)
    assert np.array_equal(ens.a[4:, 4:], scen.systems[1].a_matrix)
    assert np.all(ens.a[:4, 4:] == 0) and np.all(ens.a[4:, :4] == 0)


def test_ensemble_step_matches_per_system():
    scen = motion_two_system()
    ens = build_ensemble(scen)
    rng = np.random.default_rng(1)
    x = rng.normal(size=8)
    u = rng.normal(size=4)
    stacked = ens.a @ x + ens.b @ u
    per_sys = np.concatenate([
        plant_step(scen.systems[i], x[4 * i:4 * i + 4], u[2 * i:2 * i + 2])
        for i in range(2)])
    assert np.allclose(stacked, per_sys, atol=1e-12)


def test_validate_scenario_budget_warning():
    scen = get_preset("two-system")  # equilibrium effort 12 + 2 = 14 > 10
    rep = validate_scenario(scen)
    assert rep.ok
    assert any("14" in w and "10" in w for w in rep.warnings)
    scen20 = get_preset("two-system-u20")  # 14 <= 20: no warning
    rep20 = validate_scenario(scen20)
    assert rep20.ok and not rep20.warnings


def test_validate_scenario_dimension_mix():
    s1 = get_preset("two-system")
    mixed = Scenario(systems=(s1.systems[0], motion_two_system().systems[0]),
                     targets=s1.targets, input_sets=s1.input_sets,
                     state_sets=s1.state_sets, budget=s1.budget,
                     weights=s1.weights, horizon_l=s1.horizon_l,
                     sim_steps_t=s1.sim_steps_t,
                     initial_states=s1.initial_states)
    rep = validate_scenario(mixed)
    assert not rep.ok
    assert any("dimensions" in v for v in rep.violations)


def test_validate_scenario_bad_class_partition():
    scen = get_preset("motion-two-class")
    broken = Scenario(systems=scen.systems, targets=scen.targets,
                      input_sets=scen.input_sets, state_sets=scen.state_sets,
                      budget=scen.budget, weights=scen.weights,
                      horizon_l=scen.horizon_l, sim_steps_t=scen.sim_steps_t,
                      initial_states=scen.initial_states,
                      classes=((0, 1, 2), (4, 5, 6, 7)))  # 3 missing
    rep = validate_scenario(broken)
    assert not rep.ok


def test_equilibrium_residual_invariant_on_presets():
    for name in ("two-system", "two-system-unstable", "motion-two-system",
                 "motion-two-class"):
        scen = get_preset(name)
        for sysm, tgt in zip(scen.systems, scen.targets):
            assert tgt.residual(sysm) <= 1e-8


def test_polytope_membership_and_interior():
    box = PolytopeSet([[1.0], [-1.0]], [1.0, 1.0])  # |z| <= 1
    assert box.contains([0.5])
    assert box.strictly_contains([0.5])
    assert box.contains([1.0])
    assert not box.strictly_contains([1.0])
    assert not box.contains([1.1])
    free = PolytopeSet.unconstrained(3)
    assert free.contains([1e9, -1e9, 0.0])
    assert free.strictly_contains([1e9, -1e9, 0.0])


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2))
@settings(max_examples=50, deadline=None)
def test_polytope_interior_implies_membership(point):
    box = PolytopeSet([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]],
                      [2.0, 2.0, 2.0, 2.0])
    if box.strictly_contains(point):
        assert box.contains(point)


def test_budget_policy_validation():
    with pytest.raises(ValueError):
        BudgetPolicy(mode="weekly", u_bar_0=1.0)
    with pytest.raises(ValueError):
        BudgetPolicy(mode="constant", u_bar_0=0.0)


def test_weight_set_requires_positive_definite_q():
    with pytest.raises(ValueError):
        WeightSet(q_weights=(np.zeros((1, 1)),), rho_bar=(1.0,),
                  w_bar=(np.eye(1),), gamma_u=0.1, gamma_e=1.0, beta=0.1,
                  lambda_x=0.1, lambda_u=0.1)


def test_weight_masking_zeroes_without_removing():
    scen = get_preset("two-system")
    masked = scen.weights.masked(rho_on=False, w_on=False)
    assert len(masked.rho_bar) == len(scen.weights.rho_bar)
    assert all(r == 0.0 for r in masked.rho_bar)
    assert all(np.all(w == 0) for w in masked.w_bar)
    keep_rho = scen.weights.masked(rho_on=True, w_on=False)
    assert keep_rho.rho_bar == scen.weights.rho_bar

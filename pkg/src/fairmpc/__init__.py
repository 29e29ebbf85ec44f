"""Fairness-aware model predictive control for ensembles of LTI systems.

A centralized controller steers N linear systems toward individual targets
while a shared bound caps the total control effort (sum of input 1-norms).
The optimization trades off tracking performance against two fairness goals:
equality (even split of the effort budget) and equity (comparable distance
of every system from its own target).
"""
from .model import (BudgetPolicy, EquilibriumTarget, LtiSystem, PolytopeSet,
                    Scenario, WeightSet, build_ensemble,
                    compute_equilibrium_input, plant_step, validate_scenario)
from .ocp import (CostBreakdown, EquivalentWeights, OcpInstance, assemble_ocp,
                  assemble_tracking_mpc, build_equity_matrices, build_qtilde,
                  eval_cost_terms, expand_class_weights)
from .solver import CcpSettings, SolveResult, check_exactness, solve_fair_mpc
from .sim import (AutotuneState, SimulationTrace, autotune_weights,
                  detect_tbar, run_closed_loop, update_budget)
from .metrics import (KpiReport, compute_kpis, equality_index, equity_index,
                      equity_instant, individual_index, jain, scaled_jain,
                      settling_index, tracking_index)

__version__ = "0.1.0"

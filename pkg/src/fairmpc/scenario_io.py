"""Scenario JSON format: loading, validation and round-trip serialization.

Schema (a single JSON object):

    {
      "name": "...",                         # optional
      "systems": [
        {"a": [[...]], "b": [[...]],         # row-major matrices
         "x0": [...], "xs": [...],
         "us": [...],                        # optional; computed if absent
         "input_set": {"H": [[...]], "h": [...]},   # optional polytope
         "state_set": {"H": [[...]], "h": [...]},   # optional polytope
         "label": "..."},                    # optional
        ...
      ],
      "budget": {"mode": "constant" | "depleting" | "depleting-in-horizon",
                 "u_bar": 10.0},
      "weights": {"q": 1.0 | [[...]] | [[[...]], ...],
                  "rho_bar": 3.0 | [..],
                  "w_bar": 1.0 | [[...]] | [[[...]], ...],
                  "gamma_u": 0.1, "gamma_e": 10.0,
                  "beta": 0.1, "lambda_x": 0.1, "lambda_u": 0.1},
      "horizon": 20,
      "sim_steps": 20,
      "classes": [[0, 1], [2, 3]]            # optional index partition
    }

Scalars broadcast: "q"/"w_bar" scalars mean that multiple of the identity
for every system; a scalar "rho_bar" is shared by all systems (or classes).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import (BUDGET_MODES, BudgetPolicy, EquilibriumTarget, LtiSystem,
                    PolytopeSet, Scenario, WeightSet,
                    compute_equilibrium_input, validate_scenario)


class ScenarioFormatError(ValueError):
    """Malformed scenario file; the message carries the offending field."""


def _need(obj, key, where):
    if key not in obj:
        raise ScenarioFormatError(f"{where}: missing required key {key!r}")
    return obj[key]


def _matrix(value, where):
    arr = np.array(value, dtype=float)
    if arr.ndim != 2:
        raise ScenarioFormatError(f"{where}: expected a matrix (list of rows)")
    return arr


def _vector(value, where):
    arr = np.array(value, dtype=float)
    if arr.ndim != 1:
        raise ScenarioFormatError(f"{where}: expected a flat list of numbers")
    return arr


def _polytope(value, where, dim):
    if value is None:
        return PolytopeSet.unconstrained(dim)
    h_mat = _matrix(_need(value, "H", where), f"{where}.H")
    h_vec = _vector(_need(value, "h", where), f"{where}.h")
    if h_mat.shape[1] != dim:
        raise ScenarioFormatError(f"{where}.H: {h_mat.shape[1]} columns, "
                                  f"expected {dim}")
    return PolytopeSet(h_mat, h_vec)


def _weight_matrices(value, n_dim, count, where):
    arr = np.array(value, dtype=float)
    if arr.ndim == 0:
        return tuple(float(arr) * np.eye(n_dim) for _ in range(count))
    if arr.ndim == 2:
        return tuple(arr.copy() for _ in range(count))
    if arr.ndim == 3:
        if arr.shape[0] != count:
            raise ScenarioFormatError(
                f"{where}: {arr.shape[0]} matrices, expected {count}")
        return tuple(arr[i] for i in range(count))
    raise ScenarioFormatError(f"{where}: expected scalar, matrix, or list "
                              "of matrices")


def scenario_from_dict(data: dict) -> Scenario:
    systems_raw = _need(data, "systems", "scenario")
    if not systems_raw:
        raise ScenarioFormatError("systems: at least one system is required")
    systems, targets, input_sets, state_sets, x0s = [], [], [], [], []
    for idx, entry in enumerate(systems_raw):
        where = f"systems[{idx}]"
        a = _matrix(_need(entry, "a", where), f"{where}.a")
        b = _matrix(_need(entry, "b", where), f"{where}.b")
        try:
            sysm = LtiSystem(a, b, label=str(entry.get("label", f"sys{idx}")))
        except ValueError as exc:
            raise ScenarioFormatError(f"{where}: {exc}") from exc
        x0 = _vector(_need(entry, "x0", where), f"{where}.x0")
        xs = _vector(_need(entry, "xs", where), f"{where}.xs")
        if "us" in entry and entry["us"] is not None:
            us = _vector(entry["us"], f"{where}.us")
        else:
            us = compute_equilibrium_input(sysm, xs)
        systems.append(sysm)
        targets.append(EquilibriumTarget(xs, us))
        input_sets.append(_polytope(entry.get("input_set"),
                                    f"{where}.input_set", sysm.m))
        state_sets.append(_polytope(entry.get("state_set"),
                                    f"{where}.state_set", sysm.n))
        x0s.append(x0)

    budget_raw = _need(data, "budget", "scenario")
    mode = _need(budget_raw, "mode", "budget")
    if mode not in BUDGET_MODES:
        raise ScenarioFormatError(f"budget.mode: {mode!r} not one of "
                                  f"{BUDGET_MODES}")
    budget = BudgetPolicy(mode=mode,
                          u_bar_0=float(_need(budget_raw, "u_bar", "budget")))

    classes = None
    if data.get("classes") is not None:
        classes = tuple(tuple(int(i) for i in grp) for grp in data["classes"])

    w_raw = _need(data, "weights", "scenario")
    n_sys = len(systems)
    n_dim = systems[0].n
    n_groups = len(classes) if classes is not None else n_sys
    rho_raw = _need(w_raw, "rho_bar", "weights")
    rho_bar = tuple(float(r) for r in np.atleast_1d(
        np.array(rho_raw, dtype=float)))
    if len(rho_bar) == 1:
        rho_bar = rho_bar * n_groups
    weights = WeightSet(
        q_weights=_weight_matrices(_need(w_raw, "q", "weights"), n_dim,
                                   n_sys, "weights.q"),
        rho_bar=rho_bar,
        w_bar=_weight_matrices(_need(w_raw, "w_bar", "weights"), n_dim,
                               n_groups, "weights.w_bar"),
        gamma_u=float(_need(w_raw, "gamma_u", "weights")),
        gamma_e=float(_need(w_raw, "gamma_e", "weights")),
        beta=float(_need(w_raw, "beta", "weights")),
        lambda_x=float(_need(w_raw, "lambda_x", "weights")),
        lambda_u=float(_need(w_raw, "lambda_u", "weights")))

    scenario = Scenario(systems=tuple(systems), targets=tuple(targets),
                        input_sets=tuple(input_sets),
                        state_sets=tuple(state_sets), budget=budget,
                        weights=weights,
                        horizon_l=int(_need(data, "horizon", "scenario")),
                        sim_steps_t=int(_need(data, "sim_steps", "scenario")),
                        initial_states=tuple(x0s), classes=classes,
                        name=str(data.get("name", "")))
    report = validate_scenario(scenario)
    if not report.ok:
        raise ScenarioFormatError("invalid scenario: "
                                  + "; ".join(report.violations))
    return scenario


def scenario_to_dict(scenario: Scenario) -> dict:
    systems = []
    for i, sysm in enumerate(scenario.systems):
        entry = {
            "a": sysm.a_matrix.tolist(),
            "b": sysm.b_matrix.tolist(),
            "x0": scenario.initial_states[i].tolist(),
            "xs": scenario.targets[i].x_s.tolist(),
            "us": scenario.targets[i].u_s.tolist(),
            "label": sysm.label,
        }
        if scenario.input_sets[i].n_rows:
            entry["input_set"] = {"H": scenario.input_sets[i].h_matrix.tolist(),
                                  "h": scenario.input_sets[i].h_vector.tolist()}
        if scenario.state_sets[i].n_rows:
            entry["state_set"] = {"H": scenario.state_sets[i].h_matrix.tolist(),
                                  "h": scenario.state_sets[i].h_vector.tolist()}
        systems.append(entry)
    w = scenario.weights
    data = {
        "name": scenario.name,
        "systems": systems,
        "budget": {"mode": scenario.budget.mode,
                   "u_bar": scenario.budget.u_bar_0},
        "weights": {
            "q": [q.tolist() for q in w.q_weights],
            "rho_bar": list(w.rho_bar),
            "w_bar": [m.tolist() for m in w.w_bar],
            "gamma_u": w.gamma_u, "gamma_e": w.gamma_e,
            "beta": w.beta, "lambda_x": w.lambda_x, "lambda_u": w.lambda_u,
        },
        "horizon": scenario.horizon_l,
        "sim_steps": scenario.sim_steps_t,
    }
    if scenario.classes is not None:
        data["classes"] = [list(grp) for grp in scenario.classes]
    return data


def load_scenario_file(path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"{path}: not valid JSON ({exc})") from exc
    return scenario_from_dict(data)


def save_scenario_file(scenario: Scenario, path):
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2)
                          + "\n")

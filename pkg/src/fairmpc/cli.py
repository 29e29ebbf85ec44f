"""Command-line front end: scenario runs, bound verification, validation.

    fairmpc run --preset two-system --strategy fair-mpc --out results/
    fairmpc verify --preset two-system --draws 1000 --seed 0
    fairmpc validate --scenario my_scenario.json
    fairmpc presets

``run`` writes ``trace.csv`` (plot-ready per-step series), ``kpi.json``
(aggregate indexes) and ``summary.txt``. Exit codes: 0 when every step
solved to optimality, 2 when some step stopped at the iteration cap, 1 on
infeasibility or bad input.
"""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .analysis import run_verification_suite
from .metrics import compute_kpis
from .model import validate_scenario
from .ocp import EQUALITY_DC, EQUALITY_HINGE
from .presets import PRESETS, get_preset
from .scenario_io import ScenarioFormatError, load_scenario_file
from .sim import (AUTOTUNE_FIXED, AUTOTUNE_MODES, STATUS_BUDGET_EXHAUSTED,
                  STRATEGY_MASKS, run_closed_loop)
from .solver import (STATUS_MAX_ITERATIONS, STATUS_OPTIMAL, CcpSettings)

STRATEGIES = tuple(sorted(STRATEGY_MASKS))


@dataclass
class RunManifest:
    """Everything one experiment needs; maps 1:1 onto the CLI flags."""
    scenario_path: Optional[str] = None
    preset: Optional[str] = None
    strategy: str = "fair-mpc"
    autotune: str = AUTOTUNE_FIXED
    out_dir: str = "fairmpc-out"
    seed: int = 0
    draws: int = 1000
    budget_in_horizon: bool = False
    equality_mode: str = EQUALITY_DC
    solver_settings: CcpSettings = field(default_factory=CcpSettings)

    def load(self):
        if (self.scenario_path is None) == (self.preset is None):
            raise ValueError("exactly one of scenario path / preset "
                             "must be given")
        if self.preset is not None:
            return get_preset(self.preset)
        return load_scenario_file(self.scenario_path)


def _fmt(value) -> str:
    return format(float(value), ".17g")


def write_trace_csv(trace, path):
    """Per-step series with 17-significant-digit floats; the last row holds
    the final state only."""
    n_sys, n, m = trace.n_systems, trace.n, trace.m
    header = ["t"]
    header += [f"x{i + 1}_{j + 1}" for i in range(n_sys) for j in range(n)]
    header += [f"u{i + 1}_{j + 1}" for i in range(n_sys) for j in range(m)]
    header += ["u_bar_t", "rho_bar_t", "jain_scaled_t", "equity_t",
               "solver_status"]
    lines = [",".join(header)]
    for t in range(trace.t_steps):
        row = [str(t)]
        row += [_fmt(v) for v in trace.states[t]]
        row += [_fmt(v) for v in trace.inputs[t]]
        row.append(_fmt(trace.budgets[t]))
        row.append(_fmt(np.mean(trace.rho_bar[t])))
        row.append(_fmt(trace.jain_scaled[t]))
        row.append(_fmt(trace.equity[t]))
        row.append(trace.statuses[t])
        lines.append(",".join(row))
    final = [str(trace.t_steps)]
    final += [_fmt(v) for v in trace.final_state]
    final += [""] * (n_sys * m) + ["", "", "", "", ""]
    lines.append(",".join(final))
    Path(path).write_text("\n".join(lines) + "\n")


def write_kpi_json(report, path):
    Path(path).write_text(json.dumps(report.as_dict(), indent=2) + "\n")


def write_summary(trace, report, manifest, path):
    lines = [
        f"scenario:  {manifest.preset or manifest.scenario_path}",
        f"strategy:  {manifest.strategy}",
        f"autotune:  {manifest.autotune}",
        f"steps:     {trace.t_steps}",
        f"statuses:  " + ", ".join(
            f"{s}={trace.statuses.count(s)}" for s in sorted(set(trace.statuses))),
        "",
        f"H_s ({report.h_s_variant}): {report.h_s:.3f}",
        f"H_tau (alpha={report.alpha_pct:g}%): {report.h_tau:.3f}",
        f"H_u: {report.h_u:.3f}",
        f"H_e: {report.h_e:.3f}",
        "H_s per system: " + ", ".join(f"{v:.3f}"
                                       for v in report.h_s_individual),
        f"total effort: {np.abs(trace.inputs).sum():.3f}",
    ]
    if trace.aborted:
        lines.insert(1, f"ABORTED: {trace.abort_reason}")
    Path(path).write_text("\n".join(lines) + "\n")


def run(manifest: RunManifest) -> int:
    """Execute one closed-loop experiment and write its artifacts."""
    scenario = manifest.load()
    trace = run_closed_loop(scenario,
                            solver_settings=manifest.solver_settings,
                            strategy=manifest.strategy,
                            autotune=manifest.autotune,
                            budget_in_horizon=manifest.budget_in_horizon,
                            equality_mode=manifest.equality_mode)
    out = Path(manifest.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = compute_kpis(trace)
    write_trace_csv(trace, out / "trace.csv")
    write_kpi_json(report, out / "kpi.json")
    write_summary(trace, report, manifest, out / "summary.txt")
    if trace.aborted:
        print(f"aborted: {trace.abort_reason}", file=sys.stderr)
        return 1
    bad = [s for s in trace.statuses
           if s not in (STATUS_OPTIMAL, STATUS_BUDGET_EXHAUSTED)]
    if any(s == STATUS_MAX_ITERATIONS for s in bad):
        return 2
    return 0


def verify(manifest: RunManifest) -> int:
    """Random-draw verification of the cost identities and bounds."""
    scenario = manifest.load()
    summary = run_verification_suite(scenario, draws=manifest.draws,
                                     seed=manifest.seed)
    def line(name, rep):
        state = "pass" if rep.satisfied else "FAIL"
        print(f"{name:26s} {state}   lhs={rep.left_hand:.6e} "
              f"rhs={rep.right_hand:.6e} margin={rep.margin:.3e}")
    line("cost identity", summary.cost_identity)
    line("cost upper bound", summary.cost_upper_bound)
    line("stage bound (safe K)", summary.stage.guaranteed_bound)
    line("stage bound (sharp K)", summary.stage.sharp_bound)
    if summary.equivalence is not None:
        line("common-target equivalence", summary.equivalence)
    print(f"draws: {summary.draws}")
    return 0 if summary.all_passed else 1


def validate(manifest: RunManifest) -> int:
    scenario = manifest.load()
    report = validate_scenario(scenario)
    for v in report.violations:
        print(f"violation: {v}")
    for w in report.warnings:
        print(f"warning: {w}")
    if report.ok:
        print("scenario valid")
        return 0
    return 1


def list_presets() -> int:
    for name in sorted(PRESETS):
        scen = PRESETS[name]()
        print(f"{name:30s} N={scen.n_systems} n={scen.n} m={scen.m} "
              f"L={scen.horizon_l} T={scen.sim_steps_t} "
              f"budget={scen.budget.mode}:{scen.budget.u_bar_0:g}")
    return 0


def _add_common(parser):
    parser.add_argument("--scenario", help="scenario JSON file")
    parser.add_argument("--preset", choices=sorted(PRESETS),
                        help="built-in scenario name")
    parser.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fairmpc",
        description="fairness-aware predictive control experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="closed-loop experiment")
    _add_common(p_run)
    p_run.add_argument("--strategy", choices=STRATEGIES, default="fair-mpc")
    p_run.add_argument("--autotune", choices=AUTOTUNE_MODES,
                       default=AUTOTUNE_FIXED)
    p_run.add_argument("--out", default="fairmpc-out",
                       help="output directory")
    p_run.add_argument("--budget-in-horizon", action="store_true",
                       help="model budget consumption inside the horizon")
    p_run.add_argument("--equality-mode",
                       choices=(EQUALITY_DC, EQUALITY_HINGE),
                       default=EQUALITY_DC)

    p_verify = sub.add_parser("verify", help="numerical bound verification")
    _add_common(p_verify)
    p_verify.add_argument("--draws", type=int, default=1000)

    p_val = sub.add_parser("validate", help="check a scenario file")
    _add_common(p_val)

    sub.add_parser("presets", help="list built-in scenarios")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "presets":
            return list_presets()
        manifest = RunManifest(scenario_path=args.scenario,
                               preset=args.preset, seed=args.seed)
        if args.command == "run":
            manifest.strategy = args.strategy
            manifest.autotune = args.autotune
            manifest.out_dir = args.out
            manifest.budget_in_horizon = args.budget_in_horizon
            manifest.equality_mode = args.equality_mode
            return run(manifest)
        if args.command == "verify":
            manifest.draws = args.draws
            return verify(manifest)
        if args.command == "validate":
            return validate(manifest)
    except (ScenarioFormatError, ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())

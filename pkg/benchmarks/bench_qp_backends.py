"""Benchmark: compiled LDL' kernel vs pure-python (scipy LU) QP engine.

Times cold and warm solves of representative transcribed instances plus a
full closed-loop run per engine. Run from the repository root:

    python3 benchmarks/bench_qp_backends.py
"""
import time

from fairmpc.ocp import assemble_ocp
from fairmpc.presets import get_preset
from fairmpc.qp import AdmmQpSolver, AdmmSettings, available_engines
from fairmpc.sim import run_closed_loop
from fairmpc.solver import CcpSettings


def bench_qp(engine, instance, repeats=20):
    q = instance.q_vector()
    settings = AdmmSettings(eps_abs=1e-7, eps_rel=1e-7)
    start = time.perf_counter()
    solver = AdmmQpSolver(instance.p_matrix, instance.a_matrix,
                          instance.l_bounds, instance.u_bounds,
                          settings=settings, engine=engine, q_ref=q)
    setup_time = time.perf_counter() - start

    start = time.perf_counter()
    res = solver.solve(q, instance.l_bounds, instance.u_bounds,
                       warm_start=False)
    cold_time = time.perf_counter() - start
    assert res.status == "solved", res.status

    start = time.perf_counter()
    for _ in range(repeats):
        res = solver.solve(q, instance.l_bounds, instance.u_bounds)
    warm_time = (time.perf_counter() - start) / repeats
    return setup_time, cold_time, warm_time, res.iterations


def bench_closed_loop(engine, preset, strategy, autotune):
    scen = get_preset(preset)
    settings = CcpSettings(engine=engine)
    start = time.perf_counter()
    trace = run_closed_loop(scen, solver_settings=settings,
                            strategy=strategy, autotune=autotune)
    elapsed = time.perf_counter() - start
    assert not trace.aborted
    return elapsed


def main():
    engines = available_engines()
    print(f"engines available: {', '.join(engines)}")
    print()

    cases = [
        ("two-system (fair weights)", "two-system", None),
        ("motion-two-class (fair weights)", "motion-two-class", None),
    ]
    print(f"{'instance':34s} {'engine':9s} {'setup':>9s} {'cold':>9s} "
          f"{'warm':>9s}")
    for label, preset, _ in cases:
        scen = get_preset(preset)
        inst = assemble_ocp(scen, scen.stacked_initial_state(),
                            scen.budget.u_bar_0)
        for engine in engines:
            setup, cold, warm, _ = bench_qp(engine, inst)
            print(f"{label:34s} {engine:9s} {setup * 1e3:7.1f}ms "
                  f"{cold * 1e3:7.1f}ms {warm * 1e3:7.1f}ms")
    print()

    loops = [
        ("two-system fair-mpc", "two-system", "fair-mpc", "fixed"),
        ("motion-two-class fair-mpc/case-a", "motion-two-class", "fair-mpc",
         "case-a"),
    ]
    print(f"{'closed loop (T=20)':34s} {'engine':9s} {'total':>9s}")
    for label, preset, strategy, autotune in loops:
        for engine in engines:
            elapsed = bench_closed_loop(engine, preset, strategy, autotune)
            print(f"{label:34s} {engine:9s} {elapsed:8.2f}s")


if __name__ == "__main__":
    main()

"""Command-line entry points: one-shot solves, closed-loop MPC runs,
gait-plan inspection, and benchmark sweeps written out as CSV data files.

Exit codes: 0 success (and converged, for solves), 1 usage or input error,
2 solver hit the iteration cap without reaching the violation tolerance.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .admm import admm_solve
from .scenario import (
    Scenario,
    ScenarioError,
    build_problem_spec,
    load_scenario,
)
from .simulator import (
    SimulationAbort,
    mpc_cost_metric,
    push_recovered,
    run_closed_loop,
)

BENCH_KNOT_COUNTS = tuple(range(10, 150, 10))
BENCH_FREQUENCIES_HZ = (2.0, 5.0, 7.0, 10.0, 20.0, 40.0)
PUSH_FREQUENCIES_HZ = (20.0, 50.0, 100.0)
PUSH_BISECTION_TOL_N = 0.5

# perturbation half-ranges for randomized initial states
INIT_POS_RANGE_M = 0.05
INIT_VEL_RANGE_MS = 0.2
INIT_AMOM_RANGE = 0.05


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="centroidal-nmpc")
    p.add_argument("--scenario", required=True, help="scenario JSON file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--mode", required=True,
                   choices=["solve", "mpc", "gait", "bench-knots", "bench-freq", "bench-push"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rho", type=float, default=None)
    p.add_argument("--eps-dyn", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=None)
    p.add_argument("--replan-hz", type=float, default=None)
    p.add_argument("--sequential", action="store_true",
                   help="freeze time while solving (deterministic replays)")
    return p


def _apply_overrides(scenario: Scenario, args) -> Scenario:
    if args.rho is not None:
        scenario.admm.rho = args.rho
    if args.eps_dyn is not None:
        scenario.admm.eps_dyn = args.eps_dyn
    if args.max_iter is not None:
        scenario.admm.max_iter = args.max_iter
    if args.replan_hz is not None:
        scenario.mpc.replan_hz = args.replan_hz
    return scenario


def _write_json(path: Path, payload: dict):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt(v) -> str:
    return f"{float(v):.17g}"


def cmd_solve(scenario: Scenario, out: Path, args) -> int:
    state = scenario.initial_state()
    spec = build_problem_spec(scenario, state, t_elapsed=0.0)
    with open(out / "trace.jsonl", "w") as trace_fh:
        trace = lambda rec: trace_fh.write(json.dumps(rec) + "\n")  # noqa: E731
        result = admm_solve(spec, cfg=scenario.admm, trace=trace)

    T, N = spec.horizon, spec.n_eff
    with open(out / "trajectory.csv", "w", newline="") as fh:
        cols = ["t", "cx", "cy", "cz", "vx", "vy", "vz", "kx", "ky", "kz"]
        for j in range(N):
            cols += [f"f{j}x", f"f{j}y", f"f{j}z"]
        fh.write(",".join(cols) + "\n")
        for t in range(T + 1):
            f_row = result.F.forces[t] if t < T else np.zeros((N, 3))
            row = [t * spec.dt, *result.X.states[t], *f_row.ravel()]
            fh.write(",".join(_fmt(v) for v in row) + "\n")

    _write_json(out / "summary.json", {
        "converged": result.converged,
        "iterations": result.iterations,
        "final_violation": result.violations[-1],
        "best_violation": min(result.violations),
        "objective": result.objective,
        "violations": result.violations,
    })
    return 0 if result.converged else 2


def cmd_gait(scenario: Scenario, out: Path, args) -> int:
    state = scenario.initial_state()
    spec = build_problem_spec(scenario, state, t_elapsed=0.0)
    _write_json(out / "plan.json", spec.plan.to_json_dict())
    return 0


def cmd_mpc(scenario: Scenario, out: Path, args) -> int:
    trace_fh = None
    admm_trace = None
    if os.environ.get("BICONMP_TRACE") == "1":
        trace_fh = open(out / "mpc_trace.jsonl", "w")
        admm_trace = lambda rec: trace_fh.write(json.dumps(rec) + "\n")  # noqa: E731
    try:
        log = run_closed_loop(scenario, sequential=args.sequential,
                              admm_trace=admm_trace)
    except SimulationAbort as e:
        print(f"error: {e}", file=sys.stderr)
        if e.log is not None:
            e.log.to_csv(out / "log.csv")
        return 1
    finally:
        if trace_fh is not None:
            trace_fh.close()
    log.to_csv(out / "log.csv")
    _write_json(out / "summary.json", log.summary())
    return 0


def cmd_bench_knots(scenario: Scenario, out: Path, args) -> int:
    rng = np.random.default_rng(args.seed)
    rows = []
    for knots in BENCH_KNOT_COUNTS:
        bench = load_scenario(args.scenario)
        _apply_overrides(bench, args)
        bench.gait.n_knots = knots
        times_us = []
        violations = []
        for _ in range(20):
            state = _perturbed_state(bench, rng)
            spec = build_problem_spec(bench, state, t_elapsed=0.0)
            t0 = time.perf_counter()
            result = admm_solve(spec, cfg=bench.admm)
            times_us.append((time.perf_counter() - t0) * 1e6)
            violations.append(min(result.violations))
        rows.append((knots, float(np.mean(times_us)), float(np.std(times_us)),
                     float(np.mean(violations))))
    with open(out / "bench_knots.csv", "w", newline="") as fh:
        fh.write(f"# init perturbation half-ranges: pos {INIT_POS_RANGE_M} m, "
                 f"vel {INIT_VEL_RANGE_MS} m/s, amom {INIT_AMOM_RANGE} kg m^2/s, "
                 f"seed {args.seed}\n")
        fh.write("knots,mean_us,std_us,mean_violation\n")
        for knots, mean_us, std_us, mean_v in rows:
            fh.write(f"{knots},{_fmt(mean_us)},{_fmt(std_us)},{_fmt(mean_v)}\n")
    return 0


def _perturbed_state(scenario: Scenario, rng: np.random.Generator):
    state = scenario.initial_state()
    c = state.c + rng.uniform(-INIT_POS_RANGE_M, INIT_POS_RANGE_M, 3)
    cdot = state.cdot + rng.uniform(-INIT_VEL_RANGE_MS, INIT_VEL_RANGE_MS, 3)
    k = state.k + rng.uniform(-INIT_AMOM_RANGE, INIT_AMOM_RANGE, 3)
    from .model import CentroidalState
    return CentroidalState(c=c, cdot=cdot, k=k)


def cmd_bench_freq(scenario: Scenario, out: Path, args) -> int:
    rows = []
    for freq in BENCH_FREQUENCIES_HZ:
        run = load_scenario(args.scenario)
        _apply_overrides(run, args)
        run.mpc.replan_hz = freq
        try:
            log = run_closed_loop(run, sequential=True)
            summary = log.summary()
            rows.append((freq, mpc_cost_metric(log), summary["mean_violation"],
                         summary["tracking_rmse"]))
        except SimulationAbort:
            rows.append((freq, float("nan"), float("nan"), float("nan")))
    with open(out / "bench_freq.csv", "w", newline="") as fh:
        fh.write("replan_hz,mean_cost,mean_violation,tracking_rmse\n")
        for freq, cost, viol, rmse in rows:
            fh.write(f"{_fmt(freq)},{_fmt(cost)},{_fmt(viol)},{_fmt(rmse)}\n")
    return 0


def max_recoverable_push(scenario_path, freq_hz: float, args=None,
                         lo: float = 0.0, hi_start: float = 8.0,
                         hi_cap: float = 64.0) -> tuple[float, int]:
    """Bisect the largest recoverable push magnitude at one replan rate.

    The push template (start, duration, direction) comes from the
    scenario's first disturbance entry. Returns (magnitude, probes).
    """
    probes = 0

    def recovered(mag: float) -> bool:
        nonlocal probes
        probes += 1
        run = load_scenario(scenario_path)
        if args is not None:
            _apply_overrides(run, args)
        run.mpc.replan_hz = freq_hz
        if not run.disturbances:
            raise ScenarioError("missing required field 'disturbances' for push sweep")
        template = run.disturbances[0]
        direction = template.applied_force()
        norm = np.linalg.norm(direction)
        unit = direction / norm if norm > 0 else np.array([1.0, 0.0, 0.0])
        template.force = unit * mag
        template.direction_deg = None
        try:
            log = run_closed_loop(run, sequential=True)
        except SimulationAbort:
            return False
        return push_recovered(run, log)

    hi = hi_start
    while True:
        hi_recovered = recovered(hi)
        if not hi_recovered:
            break
        lo = hi
        if hi >= hi_cap:
            return hi_cap, probes
        hi = min(hi * 2.0, hi_cap)
    while hi - lo > PUSH_BISECTION_TOL_N:
        mid = 0.5 * (lo + hi)
        if recovered(mid):
            lo = mid
        else:
            hi = mid
    return lo, probes


def cmd_bench_push(scenario: Scenario, out: Path, args) -> int:
    rows = []
    for freq in PUSH_FREQUENCIES_HZ:
        try:
            mag, probes = max_recoverable_push(args.scenario, freq, args)
            rows.append((freq, mag, probes))
        except SimulationAbort:
            rows.append((freq, float("nan"), 0))
    with open(out / "bench_push.csv", "w", newline="") as fh:
        fh.write(f"# bisection tolerance {PUSH_BISECTION_TOL_N} N\n")
        fh.write("replan_hz,max_push_n,probes\n")
        for freq, mag, probes in rows:
            fh.write(f"{_fmt(freq)},{_fmt(mag)},{probes}\n")
    return 0


_COMMANDS = {
    "solve": cmd_solve,
    "mpc": cmd_mpc,
    "gait": cmd_gait,
    "bench-knots": cmd_bench_knots,
    "bench-freq": cmd_bench_freq,
    "bench-push": cmd_bench_push,
}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        scenario = load_scenario(args.scenario)
        _apply_overrides(scenario, args)
    except (OSError, ScenarioError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        return _COMMANDS[args.mode](scenario, out, args)
    except ScenarioError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Closed-loop point-mass MPC harness.

The plant is the centroidal point mass itself, integrated at the control
rate with the same explicit Euler scheme as the model, under forces
linearly interpolated from the latest available plan. Replanning happens at
a configured frequency from the measured state; plan lag can be emulated
deterministically (fixed delay, prefix skipped) or taken from wall-clock
solve time. Disturbance pushes are injected directly at the CoM.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .admm import AdmmSolver, AdmmResult
from .model import CentroidalState, ForcePlan, StateTrajectory
from .scenario import Scenario, build_problem_spec

_MAX_CONSECUTIVE_FAILURES = 3


class PlanLagError(ValueError):
    """Requested lag does not leave any plan to execute."""


class SimulationAbort(RuntimeError):
    """Closed loop gave up; carries the partial log for inspection."""

    def __init__(self, message: str, log: "SimLog" = None):
        super().__init__(message)
        self.log = log


def interpolate_forces(forces: np.ndarray, dt: float, t_since_plan: float) -> tuple[np.ndarray, bool]:
    """Piecewise-linear force lookup between knot values.

    Because inactive knots carry zero force, a flight-to-stance transition
    ramps from zero across the interval preceding the first stance knot.
    Beyond the last knot the value is held and the exhausted flag raised
    once t passes the full plan span.
    """
    forces = np.asarray(forces, dtype=float)
    T = forces.shape[0]
    if t_since_plan < 0.0:
        raise ValueError("t_since_plan must be nonnegative")
    s = t_since_plan / dt
    k = int(s)
    if k >= T - 1:
        return forces[T - 1].copy(), t_since_plan >= T * dt
    a = s - k
    return (1.0 - a) * forces[k] + a * forces[k + 1], False


@dataclass
class ActivePlan:
    """A solved plan anchored at the sim time its initial state was read."""

    forces: np.ndarray     # (T, N, 3)
    positions: np.ndarray  # (T, N, 3)
    active: np.ndarray     # (T, N)
    dt: float
    origin: float
    available_from: float = 0.0
    violation: float = 0.0
    objective: float = 0.0
    solve_us: int = 0

    @property
    def horizon_s(self) -> float:
        return self.forces.shape[0] * self.dt

    def query(self, t_sim: float) -> tuple[np.ndarray, np.ndarray, bool]:
        """Interpolated forces, matching contact positions, exhausted flag."""
        tau = max(t_sim - self.origin, 0.0)
        f, exhausted = interpolate_forces(self.forces, self.dt, tau)
        T = self.forces.shape[0]
        k = min(int(tau / self.dt), T - 1)
        pos = self.positions[k].copy()
        if k + 1 < T:
            # ramp interval entering stance: moment arm of the stance knot
            ramping = ~self.active[k] & self.active[k + 1]
            pos[ramping] = self.positions[k + 1][ramping]
        return f, pos, exhausted


def apply_plan_lag(plan: ActivePlan, solve_time: float) -> ActivePlan:
    """Skip the prefix of the plan consumed while solving.

    Moving the origin back by solve_time makes a query at wall time t read
    the plan solve_time further in, matching a controller that receives the
    plan late and drops the stale part.
    """
    if solve_time < 0.0:
        raise ValueError("solve_time must be nonnegative")
    if solve_time >= plan.horizon_s:
        raise PlanLagError("lag exceeds horizon")
    return ActivePlan(forces=plan.forces, positions=plan.positions,
                      active=plan.active, dt=plan.dt,
                      origin=plan.origin - solve_time,
                      available_from=plan.available_from,
                      violation=plan.violation, objective=plan.objective,
                      solve_us=plan.solve_us)


@dataclass
class SimLog:
    """One row per control tick plus one record per replan."""

    t: np.ndarray
    states: np.ndarray        # (n, 9)
    forces: np.ndarray        # (n, N, 3)
    v_des: np.ndarray         # (n, 3)
    violation: np.ndarray     # (n,)
    solve_us: np.ndarray      # (n,) int
    cost: np.ndarray          # (n,)
    replans: list[dict] = field(default_factory=list)
    n_failures: int = 0
    n_exhausted: int = 0

    def to_csv(self, path):
        n, N = self.forces.shape[0], self.forces.shape[1]
        cols = ["t", "cx", "cy", "cz", "vx", "vy", "vz", "kx", "ky", "kz"]
        for j in range(N):
            cols += [f"f{j}x", f"f{j}y", f"f{j}z"]
        cols += ["vdesx", "vdesy", "vdesz", "violation", "solve_us", "cost"]
        with open(path, "w", newline="") as fh:
            fh.write(",".join(cols) + "\n")
            for i in range(n):
                row = [self.t[i], *self.states[i], *self.forces[i].ravel(),
                       *self.v_des[i], self.violation[i]]
                text = ",".join(f"{v:.17g}" for v in row)
                fh.write(f"{text},{int(self.solve_us[i])},{self.cost[i]:.17g}\n")

    def summary(self) -> dict:
        verr = self.states[:, 3:5] - self.v_des[:, 0:2]
        return {
            "mean_cost": float(np.mean([r["objective"] for r in self.replans])) if self.replans else float("nan"),
            "mean_violation": float(np.mean([r["violation"] for r in self.replans])) if self.replans else float("nan"),
            "tracking_rmse": float(np.sqrt(np.mean(np.sum(verr * verr, axis=1)))),
            "max_solve_us": int(self.solve_us.max()) if len(self.solve_us) else 0,
            "n_replans": len(self.replans),
            "n_failures": self.n_failures,
        }


def mpc_cost_metric(log: SimLog) -> float:
    """Mean converged objective over replan instants."""
    if not log.replans:
        raise ValueError("empty log")
    return float(np.mean([r["objective"] for r in log.replans]))


def _shift_solution(prev: AdmmResult, k: int) -> tuple[StateTrajectory, ForcePlan, np.ndarray]:
    """Shift a solution k knots forward, replicating the terminal knot."""
    X = prev.X.states
    F = prev.F.forces
    T = F.shape[0]
    P = prev.P.reshape(T, 9)
    idx_x = np.minimum(np.arange(X.shape[0]) + k, X.shape[0] - 1)
    idx_f = np.minimum(np.arange(T) + k, T - 1)
    return (StateTrajectory(X[idx_x].copy(), prev.X.dt),
            ForcePlan(F[idx_f].copy()),
            P[idx_f].reshape(-1).copy())


def run_closed_loop(scenario: Scenario, sequential: bool = True,
                    solver: Optional[AdmmSolver] = None,
                    admm_trace=None) -> SimLog:
    """Simulate the scenario under replanned interpolated forces.

    sequential mode freezes time while solving (plans are available at the
    tick that requested them unless a fixed lag is configured) and logs
    solve_us as zero so repeated runs are byte-identical. Solver failures
    hold the previous plan; more than _MAX_CONSECUTIVE_FAILURES in a row
    aborts. admm_trace, when given, receives one record per outer solver
    iteration augmented with the replan index.
    """
    mpc = scenario.mpc
    if solver is None:
        solver = AdmmSolver(scenario.admm)
    dt_c = 1.0 / mpc.control_hz
    n_ticks = int(round(mpc.scenario_duration * mpc.control_hz))
    N = scenario.hip_offsets.shape[0]

    log = SimLog(
        t=np.zeros(n_ticks), states=np.zeros((n_ticks, 9)),
        forces=np.zeros((n_ticks, N, 3)), v_des=np.zeros((n_ticks, 3)),
        violation=np.zeros(n_ticks), solve_us=np.zeros(n_ticks, dtype=np.int64),
        cost=np.zeros(n_ticks),
    )

    state = scenario.initial_state()
    current: Optional[ActivePlan] = None
    pending: Optional[ActivePlan] = None
    prev_result: Optional[AdmmResult] = None
    prev_origin = 0.0
    next_replan = 0.0
    replan_period = 1.0 / mpc.replan_hz
    consecutive_failures = 0

    for i in range(n_ticks):
        t = i * dt_c

        if pending is not None and t + 1e-12 >= pending.available_from:
            current = pending
            pending = None

        if t + 1e-12 >= next_replan:
            next_replan += replan_period
            v_des = scenario.v_des_at(t)
            t_wall = time.perf_counter()
            try:
                spec = build_problem_spec(scenario, state, t_elapsed=t, v_des=v_des)
                init = None
                if mpc.warm_start and prev_result is not None:
                    k_shift = int(round((t - prev_origin) / scenario.gait.dt))
                    init = _shift_solution(prev_result, max(k_shift, 0))
                trace = None
                if admm_trace is not None:
                    idx = len(log.replans)
                    trace = lambda rec, _i=idx: admm_trace({"solve": _i, **rec})  # noqa: E731
                result = solver.solve(spec, init=init, trace=trace)
            except Exception as e:  # noqa: BLE001 - deployment mirrors: hold plan
                consecutive_failures += 1
                log.n_failures += 1
                if consecutive_failures > _MAX_CONSECUTIVE_FAILURES:
                    log_partial = _truncate_log(log, i)
                    raise SimulationAbort(
                        f"solver failed {consecutive_failures} consecutive cycles at t={t:.3f}s: {e}",
                        log_partial) from e
            else:
                consecutive_failures = 0
                solve_us = int((time.perf_counter() - t_wall) * 1e6)
                prev_result = result
                prev_origin = t
                lag = 0.0
                if mpc.lag_model == "fixed":
                    lag = mpc.lag_ms / 1000.0
                elif mpc.lag_model == "measured" and not sequential:
                    lag = solve_us / 1e6
                plan = ActivePlan(
                    forces=result.F.forces, positions=spec.plan.positions,
                    active=spec.plan.active, dt=scenario.gait.dt, origin=t,
                    available_from=t + lag,
                    violation=result.violations[-1], objective=result.objective,
                    solve_us=0 if sequential else solve_us,
                )
                log.replans.append({
                    "t": t, "violation": plan.violation,
                    "objective": plan.objective,
                    "converged": result.converged,
                    "iterations": result.iterations,
                    "solve_us": solve_us,
                })
                if lag == 0.0:
                    current = plan
                    pending = None
                else:
                    pending = plan
                if current is None:
                    current = plan  # nothing older to hold; use it immediately

        v_des = scenario.v_des_at(t)
        if current is not None:
            f_plan, pos, exhausted = current.query(t)
            if exhausted:
                log.n_exhausted += 1
            viol, cost, s_us = current.violation, current.objective, current.solve_us
        else:
            f_plan = np.zeros((N, 3))
            pos = np.zeros((N, 3))
            viol = cost = 0.0
            s_us = 0

        f_net = f_plan.sum(axis=0)
        moment = np.cross(pos - state.c, f_plan).sum(axis=0)
        for dist in scenario.disturbances:
            if dist.active_at(t):
                fd = dist.applied_force()
                f_net = f_net + fd
                if dist.offset is not None:
                    moment = moment + np.cross(dist.offset, fd)

        log.t[i] = t
        log.states[i] = state.as_vector()
        log.forces[i] = f_plan
        log.v_des[i] = v_des
        log.violation[i] = viol
        log.solve_us[i] = s_us
        log.cost[i] = cost

        # same explicit Euler as the model: position advances on the old
        # velocity, moments use the old CoM.
        c_new = state.c + state.cdot * dt_c
        cdot_new = state.cdot + f_net * (dt_c / scenario.mass) + scenario.gravity * dt_c
        k_new = state.k + moment * dt_c
        if not (np.isfinite(c_new).all() and np.isfinite(cdot_new).all() and np.isfinite(k_new).all()):
            raise SimulationAbort(f"state diverged at t={t:.3f}s", _truncate_log(log, i))
        state = CentroidalState(c=c_new, cdot=cdot_new, k=k_new)

    return log


def _truncate_log(log: SimLog, n: int) -> SimLog:
    return SimLog(t=log.t[:n], states=log.states[:n], forces=log.forces[:n],
                  v_des=log.v_des[:n], violation=log.violation[:n],
                  solve_us=log.solve_us[:n], cost=log.cost[:n],
                  replans=log.replans, n_failures=log.n_failures,
                  n_exhausted=log.n_exhausted)


def push_recovered(scenario: Scenario, log: SimLog, settle_time: float = 1.0,
                   v_tol: float = 0.3, z_min: float = 0.05, z_max: float = 0.6) -> bool:
    """Did the closed loop ride out the pushes?

    Recovery means the CoM height stayed within sane bounds for the whole
    run, no solve failed, and the mean horizontal velocity error over the
    final settle window is small.
    """
    if log.n_failures > 0:
        return False
    z = log.states[:, 2]
    if (z < z_min).any() or (z > z_max).any():
        return False
    tail = log.t >= log.t[-1] - settle_time
    verr = log.states[tail, 3:5] - log.v_des[tail, 0:2]
    return float(np.linalg.norm(verr, axis=1).mean()) <= v_tol

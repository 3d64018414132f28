"""Alternating biconvex solver for the centroidal OCP.

Outer loop: minimize over the forces with the states frozen, then over the
states with the new forces frozen, then take a scaled dual step
P <- P + A(F) X - b(F). The dual enters both penalties as written (no
division by rho). Terminates when the squared dynamics violation
||A(F) X - b(F)||^2 drops below eps_dyn, or at the iteration cap.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .fista import ConeProx, BoxProx, ConvexSubproblem, FistaConfig, fista_minimize
from .model import (
    ForcePlan,
    ProblemSpec,
    StateTrajectory,
    build_force_system,
    build_state_system,
    dynamics_residual,
)


@dataclass
class AdmmConfig:
    rho: float = 100.0
    eps_dyn: float = 1e-3
    max_iter: int = 50
    inner: FistaConfig = field(default_factory=FistaConfig)

    def __post_init__(self):
        if self.rho <= 0.0:
            raise ValueError("rho must be positive")
        if self.eps_dyn <= 0.0:
            raise ValueError("eps_dyn must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class AdmmResult:
    X: StateTrajectory
    F: ForcePlan
    P: np.ndarray
    violations: list[float]
    iterations: int
    converged: bool
    objective: float
    inner_iters_f: list[int]
    inner_iters_x: list[int]

    @property
    def violation(self) -> float:
        return min(self.violations)


def violation(X: StateTrajectory, F: ForcePlan, spec: ProblemSpec) -> float:
    """Squared Euclidean norm of the dynamics residual."""
    r = dynamics_residual(X, F, spec)
    return float(r @ r)


class AdmmSolver:
    """Owns per-solve workspace and the warm-start line-search cache.

    The accepted FISTA step parameters are remembered separately for the
    force and state subproblems and reused across solves (including across
    MPC cycles), so later line searches usually accept immediately.
    """

    def __init__(self, cfg: Optional[AdmmConfig] = None):
        self.cfg = cfg if cfg is not None else AdmmConfig()
        self._warm_L = {"force": None, "state": None}

    def reset_warm_start(self):
        self._warm_L = {"force": None, "state": None}

    def solve(self, spec: ProblemSpec,
              init: Optional[tuple[StateTrajectory, ForcePlan, np.ndarray]] = None,
              trace: Optional[Callable[[dict], None]] = None) -> AdmmResult:
        cfg = self.cfg
        T = spec.horizon
        N = spec.n_eff
        if init is not None:
            X, F, P = init
            x_full = X.states.copy()
            f = F.forces.copy()
            dual = np.asarray(P, dtype=float).reshape(9 * T).copy()
        else:
            x_full = spec.x_nom.states.copy()
            f = np.zeros((T, N, 3))
            dual = np.zeros(9 * T)
        if x_full.shape != (T + 1, 9) or f.shape != (T, N, 3):
            raise ValueError("init dimensions do not match problem")
        x_full[0] = spec.x_init.as_vector()
        # complementarity: inactive entries start at zero and the zero
        # columns of A(X) keep them there through every iterate.
        f[~spec.plan.active] = 0.0

        w_f = spec.force_weight_diag()
        w_x = spec.state_weight_diag()
        x_nom = spec.state_nominal_flat()
        lb, ub = spec.state_bounds_flat()
        cone = ConeProx(spec.mu)
        box = BoxProx(lb, ub)

        f_flat = f.reshape(-1)
        x_free = x_full[1:].reshape(-1)

        violations: list[float] = []
        inner_f: list[int] = []
        inner_x: list[int] = []
        best = None
        converged = False
        iterations = 0
        for k in range(cfg.max_iter):
            t0 = time.perf_counter()

            sys_f = build_force_system(StateTrajectory(x_full, spec.dt), spec)
            prob_f = ConvexSubproblem(w_f, np.zeros_like(f_flat), sys_f.A,
                                      sys_f.b - dual, cfg.rho)
            res_f = fista_minimize(prob_f, cone, f_flat,
                                   self._inner_cfg("force"))
            f_flat = res_f.x
            self._warm_L["force"] = res_f.accepted_L
            inner_f.append(res_f.iterations)

            F_new = ForcePlan(f_flat.reshape(T, N, 3))
            sys_x = build_state_system(F_new, spec)
            prob_x = ConvexSubproblem(w_x, x_nom, sys_x.A,
                                      sys_x.b - dual, cfg.rho)
            res_x = fista_minimize(prob_x, box, x_free,
                                   self._inner_cfg("state"))
            x_free = res_x.x
            self._warm_L["state"] = res_x.accepted_L
            inner_x.append(res_x.iterations)

            x_full = np.vstack([spec.x_init.as_vector(), x_free.reshape(T, 9)])
            resid = sys_x.A @ x_free - sys_x.b
            dual = dual + resid
            viol = float(resid @ resid)
            violations.append(viol)
            iterations = k + 1
            if trace is not None:
                trace({
                    "iter": k,
                    "violation": viol,
                    "inner_iters_f": res_f.iterations,
                    "inner_iters_x": res_x.iterations,
                    "elapsed_us": int((time.perf_counter() - t0) * 1e6),
                })
            if best is None or viol < best[0]:
                best = (viol, x_full.copy(), f_flat.copy(), dual.copy())
            if viol <= cfg.eps_dyn:
                converged = True
                break

        viol_best, x_best, f_best, dual_best = best
        X_out = StateTrajectory(x_best, spec.dt)
        F_out = ForcePlan(f_best.reshape(T, N, 3))
        obj = objective_value(X_out, F_out, spec)
        return AdmmResult(X=X_out, F=F_out, P=dual_best, violations=violations,
                          iterations=iterations, converged=converged,
                          objective=obj, inner_iters_f=inner_f, inner_iters_x=inner_x)

    def _inner_cfg(self, kind: str) -> FistaConfig:
        base = self.cfg.inner
        warm = self._warm_L[kind]
        if warm is not None:
            # hand the line search one step below the last accepted value so
            # L tracks the current problem instead of ratcheting upward across
            # solves; backtracking restores it within one trial if needed.
            warm = warm / base.beta_ls
        else:
            warm = base.warm_start_L
        return FistaConfig(max_iter=base.max_iter, grad_tol=base.grad_tol,
                           l0=base.l0, beta_ls=base.beta_ls, warm_start_L=warm)


def objective_value(X: StateTrajectory, F: ForcePlan, spec: ProblemSpec) -> float:
    """Tracking plus force cost Phi(X) + Phi(F) over the free knots."""
    dx = X.states[1:].ravel() - spec.state_nominal_flat()
    f = F.forces.ravel()
    return float(spec.state_weight_diag() @ (dx * dx) + spec.force_weight_diag() @ (f * f))


def admm_solve(spec: ProblemSpec,
               init: Optional[tuple[StateTrajectory, ForcePlan, np.ndarray]] = None,
               cfg: Optional[AdmmConfig] = None,
               trace: Optional[Callable[[dict], None]] = None) -> AdmmResult:
    """One-shot solve with a fresh workspace (no warm-start cache reuse)."""
    return AdmmSolver(cfg).solve(spec, init=init, trace=trace)

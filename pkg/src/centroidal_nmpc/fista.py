"""Accelerated proximal gradient solver for the convex subproblems.

Each subproblem is a strictly convex quadratic
    f(z) = (z - z_nom)' W (z - z_nom) + rho/2 ||A z - r||^2
restricted to a set with a closed-form Euclidean projection: a per-coordinate
box for the state block, or per-contact second-order friction cones for the
force block. The solver is plain FISTA with backtracking line search; the
accepted step parameter is returned so later solves of the same subproblem
can start the line search from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp


class DivergenceError(RuntimeError):
    """Raised when the objective or gradient stops being finite."""


def box_project(x: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Clamp x elementwise to [lower, upper]; infinite bounds are no-ops."""
    x = np.asarray(x, dtype=float)
    lower = np.broadcast_to(np.asarray(lower, dtype=float), x.shape)
    upper = np.broadcast_to(np.asarray(upper, dtype=float), x.shape)
    if (lower > upper).any():
        raise ValueError("box bounds crossed: lower > upper")
    return np.minimum(np.maximum(x, lower), upper)


def soc_project(f: np.ndarray, mu: float) -> np.ndarray:
    """Euclidean projection of one 3-vector onto {f : ||f_xy|| <= mu * f_z}.

    Three cases: inside the cone (unchanged), inside the polar cone
    (mu * ||f_xy|| <= -f_z, projects to the origin), otherwise onto the cone
    surface with the tangential shrink beta and new normal component gamma.
    The ||f_xy|| = 0 axis falls into the first two cases, avoiding the
    zero denominator in beta.
    """
    if mu <= 0.0:
        raise ValueError("mu must be positive")
    fx, fy, fz = (float(v) for v in np.asarray(f, dtype=float).reshape(3))
    sigma = np.hypot(fx, fy)
    if sigma <= mu * fz:
        return np.array([fx, fy, fz])
    if mu * sigma <= -fz:
        return np.zeros(3)
    gamma = (mu * sigma + fz) / (mu * mu + 1.0)
    beta = mu * gamma / sigma
    return np.array([beta * fx, beta * fy, gamma])


def _cone_project_groups(x: np.ndarray, mu: float) -> np.ndarray:
    """soc_project applied to each consecutive (fx, fy, fz) triple of x."""
    f = x.reshape(-1, 3)
    fx, fy, fz = f[:, 0], f[:, 1], f[:, 2]
    sigma = np.sqrt(fx * fx + fy * fy)
    musig = mu * sigma
    inside = sigma <= mu * fz
    polar = musig <= -fz
    gamma = (musig + fz) * (1.0 / (mu * mu + 1.0))
    # sigma > 0 off the cases above, but guard the division anyway
    beta = mu * gamma / np.where(sigma > 0.0, sigma, 1.0)
    scale_xy = np.where(inside, 1.0, np.where(polar, 0.0, beta))
    z_out = np.where(inside, fz, np.where(polar, 0.0, gamma))
    out = np.empty_like(f)
    out[:, 0] = fx * scale_xy
    out[:, 1] = fy * scale_xy
    out[:, 2] = z_out
    return out.reshape(x.shape)


@dataclass(frozen=True)
class BoxProx:
    """Projection onto [lower, upper]."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        if (np.asarray(self.lower) > np.asarray(self.upper)).any():
            raise ValueError("box bounds crossed: lower > upper")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.minimum(np.maximum(x, self.lower), self.upper)


@dataclass(frozen=True)
class ConeProx:
    """Projection of each consecutive 3-group onto the friction cone."""

    mu: float

    def __post_init__(self):
        if self.mu <= 0.0:
            raise ValueError("mu must be positive")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return _cone_project_groups(np.asarray(x, dtype=float), self.mu)


class IdentityProx:
    """No constraint."""

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return x


# below this size a dense Hessian matvec beats sparse dispatch overhead
_DENSE_DIM_LIMIT = 150


class ConvexSubproblem:
    """Quadratic objective with cached Hessian for repeated gradient calls.

    Gradient: H z + g with H = 2 diag(W) + rho A'A and
    g = -(2 W z_nom + rho A' r). Build cost is dominated by the sparse
    product A'A, paid once per subproblem. H is materialized densely for
    small problems where BLAS wins.
    """

    def __init__(self, weights: np.ndarray, target: np.ndarray,
                 A: sp.csr_matrix, shift: np.ndarray, rho: float):
        self.dim = A.shape[1]
        w = np.asarray(weights, dtype=float)
        AtA = A.T @ A
        if self.dim <= _DENSE_DIM_LIMIT:
            H = rho * AtA.toarray()
            H[np.diag_indices_from(H)] += 2.0 * w
            self._H = H
            self._apply = H.dot
        else:
            self._H = (rho * AtA + sp.diags(2.0 * w)).tocsr()
            self._apply = self._H.__matmul__
        self.gradient_const = -(2.0 * w * target + rho * (A.T @ shift))
        self._const = float(w @ (target * target) + 0.5 * rho * (shift @ shift))

    def hessian_apply(self, v: np.ndarray) -> np.ndarray:
        return self._apply(v)

    def gradient(self, z: np.ndarray) -> np.ndarray:
        return self._apply(z) + self.gradient_const

    def value_from_product(self, z: np.ndarray, hz: np.ndarray) -> float:
        """Objective at z given the cached product hz = H z."""
        return 0.5 * float(z @ hz) + float(self.gradient_const @ z) + self._const

    def objective(self, z: np.ndarray) -> float:
        return self.value_from_product(z, self._apply(z))

    def objective_and_gradient(self, z: np.ndarray) -> tuple[float, np.ndarray]:
        hz = self._apply(z)
        return self.value_from_product(z, hz), hz + self.gradient_const


@dataclass
class FistaConfig:
    max_iter: int = 1000
    grad_tol: float = 1e-5
    l0: float = 1.0
    beta_ls: float = 2.0
    warm_start_L: Optional[float] = None

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.grad_tol <= 0.0 or self.l0 <= 0.0:
            raise ValueError("grad_tol and l0 must be positive")
        if self.beta_ls <= 1.0:
            raise ValueError("beta_ls must exceed 1")


@dataclass
class FistaResult:
    x: np.ndarray
    iterations: int
    final_grad_norm: float
    accepted_L: float
    converged: bool


def backtrack_step(problem: ConvexSubproblem, prox, y: np.ndarray, L: float,
                   beta_ls: float, f_y: float, grad_y: np.ndarray):
    """Grow L until the proximal step from y satisfies sufficient decrease,
    f(x) <= f(y) + grad(y)'(x - y) + L/2 ||x - y||^2.

    Returns (L, x_new, f_new). The test is evaluated in its curvature form
    d'Hd <= L d'd, exactly equivalent for these quadratic objectives but
    immune to the cancellation noise of comparing nearly equal objective
    values. Termination is guaranteed: any L at or above the largest
    Hessian eigenvalue passes.
    """
    hy = grad_y - problem.gradient_const
    while True:
        x_new = prox(y - grad_y / L)
        d = x_new - y
        hx_new = problem.hessian_apply(x_new)
        curv = float(d @ (hx_new - hy))
        if curv <= L * float(d @ d) + 1e-12 * (1.0 + abs(curv)):
            return L, x_new, problem.value_from_product(x_new, hx_new)
        L *= beta_ls


def fista_minimize(problem: ConvexSubproblem, prox, x0: np.ndarray,
                   cfg: FistaConfig,
                   callback: Optional[Callable[[int, float, float], None]] = None) -> FistaResult:
    """Minimize the subproblem over the prox constraint set.

    Iterates follow the accelerated scheme: proximal step from the
    extrapolated point y_k, momentum parameter t_{k+1} = (1+sqrt(1+4t_k^2))/2.
    Terminates when the proximal-gradient mapping norm L_k * ||x_{k+1} - y_k||
    falls below grad_tol; under constraints this is the valid stand-in for
    the gradient norm (it vanishes only at a constrained critical point,
    unlike the raw iterate step, which also dips at the turning points of
    the momentum oscillation). Every iterate is a prox output, hence
    exactly feasible.

    Since y_k is a linear combination of the last two iterates, H y_k is
    formed from their cached products; each iteration costs one Hessian
    apply per line-search trial.
    """
    x = prox(np.asarray(x0, dtype=float).copy())
    if x.shape != (problem.dim,):
        raise ValueError("x0 dimension does not match problem")
    hx = problem.hessian_apply(x)
    x_prev, hx_prev = x, hx
    t = 1.0
    m = 0.0  # momentum coefficient (t_{k-1} - 1) / t_k
    L = cfg.warm_start_L if cfg.warm_start_L is not None else cfg.l0
    grad_norm = np.inf
    iterations = 0
    converged = False
    for k in range(cfg.max_iter):
        if m != 0.0:
            y = x + m * (x - x_prev)
            hy = hx + m * (hx - hx_prev)
        else:
            y, hy = x, hx
        f_y = problem.value_from_product(y, hy)
        grad_y = hy + problem.gradient_const
        if not math.isfinite(f_y):
            raise DivergenceError("diverged")
        while True:
            x_new = prox(y - grad_y * (1.0 / L))
            hx_new = problem.hessian_apply(x_new)
            d = x_new - y
            # for an exactly quadratic objective the sufficient-decrease
            # test f(x) <= f(y) + grad'd + L/2 ||d||^2 is identical to the
            # curvature test d'Hd <= L d'd, which does not suffer the
            # catastrophic cancellation of the raw objective comparison
            curv = float(d @ (hx_new - hy))
            dd = float(d @ d)
            if not math.isfinite(curv):
                raise DivergenceError("diverged")
            if curv <= L * dd + 1e-12 * (1.0 + abs(curv)):
                break
            L *= cfg.beta_ls
        f_new = problem.value_from_product(x_new, hx_new)
        if not math.isfinite(f_new):
            raise DivergenceError("diverged")
        iterations = k + 1
        grad_norm = L * math.sqrt(dd)
        if callback is not None:
            callback(k, f_new, L)
        if grad_norm <= cfg.grad_tol:
            x, hx = x_new, hx_new
            converged = True
            break
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        m = (t - 1.0) / t_next
        x_prev, hx_prev = x, hx
        x, hx = x_new, hx_new
        t = t_next
    return FistaResult(x=x, iterations=iterations, final_grad_norm=grad_norm,
                       accepted_L=L, converged=converged)

"""Discrete centroidal dynamics model and its bi-affine constraint systems.

The decision variables are the stacked centroidal states X = {c_t, cdot_t, k_t}
and the stacked contact forces F = {f_t^j}. The explicit-Euler dynamics couple
them through a single bilinear term (the angular-momentum cross product), so
the equality constraints can be written either as A(F) X = b(F) or as
A(X) F = b(X). Both rearrangements are built here as sparse systems.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class DimensionError(ValueError):
    """Raised when trajectory, force, or plan dimensions are inconsistent."""


def skew(v: np.ndarray) -> np.ndarray:
    """Skew-symmetric matrix of a 3-vector, so skew(a) @ b == cross(a, b)."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


@dataclass(frozen=True)
class CentroidalState:
    """CoM position, CoM velocity, and angular momentum at one knot."""

    c: np.ndarray
    cdot: np.ndarray
    k: np.ndarray

    def __post_init__(self):
        for name in ("c", "cdot", "k"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(3)
            object.__setattr__(self, name, v)
        if not np.isfinite(self.as_vector()).all():
            raise ValueError("non-finite state")

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.c, self.cdot, self.k])

    @staticmethod
    def from_vector(v: np.ndarray) -> "CentroidalState":
        v = np.asarray(v, dtype=float).reshape(9)
        return CentroidalState(v[0:3], v[3:6], v[6:9])


@dataclass
class StateTrajectory:
    """Centroidal states at knots 0..T, stored row-wise as a (T+1, 9) array."""

    states: np.ndarray
    dt: float

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape[1] != 9:
            raise DimensionError("states must have shape (T+1, 9)")
        if self.states.shape[0] < 2:
            raise DimensionError("trajectory needs at least 2 knots")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")

    @property
    def horizon(self) -> int:
        """Number of integration steps T (one less than the knot count)."""
        return self.states.shape[0] - 1

    def knot(self, t: int) -> CentroidalState:
        return CentroidalState.from_vector(self.states[t])

    def flatten(self) -> np.ndarray:
        return self.states.ravel().copy()

    @staticmethod
    def from_flat(v: np.ndarray, dt: float) -> "StateTrajectory":
        v = np.asarray(v, dtype=float)
        if v.size % 9 != 0:
            raise DimensionError("flat state vector length must be a multiple of 9")
        return StateTrajectory(v.reshape(-1, 9).copy(), dt)

    def copy(self) -> "StateTrajectory":
        return StateTrajectory(self.states.copy(), self.dt)


@dataclass
class ForcePlan:
    """Per-knot, per-end-effector contact forces, shape (T, N, 3)."""

    forces: np.ndarray

    def __post_init__(self):
        self.forces = np.asarray(self.forces, dtype=float)
        if self.forces.ndim != 3 or self.forces.shape[2] != 3:
            raise DimensionError("forces must have shape (T, N, 3)")

    @property
    def horizon(self) -> int:
        return self.forces.shape[0]

    @property
    def n_eff(self) -> int:
        return self.forces.shape[1]

    def flatten(self) -> np.ndarray:
        return self.forces.ravel().copy()

    @staticmethod
    def from_flat(v: np.ndarray, horizon: int, n_eff: int) -> "ForcePlan":
        v = np.asarray(v, dtype=float)
        if v.size != 3 * horizon * n_eff:
            raise DimensionError("flat force vector has wrong length")
        return ForcePlan(v.reshape(horizon, n_eff, 3).copy())

    @staticmethod
    def zeros(horizon: int, n_eff: int) -> "ForcePlan":
        return ForcePlan(np.zeros((horizon, n_eff, 3)))

    def copy(self) -> "ForcePlan":
        return ForcePlan(self.forces.copy())


@dataclass
class ContactPlan:
    """Contact schedule: activity flags and contact positions per knot."""

    active: np.ndarray     # (T, N) bool
    positions: np.ndarray  # (T, N, 3) meters
    dt: float

    def __post_init__(self):
        self.active = np.asarray(self.active, dtype=bool)
        self.positions = np.asarray(self.positions, dtype=float)
        if self.active.ndim != 2:
            raise DimensionError("active must have shape (T, N)")
        if self.positions.shape != self.active.shape + (3,):
            raise DimensionError("positions must have shape (T, N, 3)")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if not np.isfinite(self.positions[self.active]).all():
            raise ValueError("active contact positions must be finite")

    @property
    def horizon(self) -> int:
        return self.active.shape[0]

    @property
    def n_eff(self) -> int:
        return self.active.shape[1]

    def row(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Activity flags and positions of knot t."""
        return self.active[t], self.positions[t]

    def to_json_dict(self) -> dict:
        return {
            "active": self.active.astype(int).tolist(),
            "positions": self.positions.tolist(),
            "dt": self.dt,
        }

    @staticmethod
    def from_json_dict(d: dict) -> "ContactPlan":
        return ContactPlan(
            active=np.asarray(d["active"], dtype=bool),
            positions=np.asarray(d["positions"], dtype=float),
            dt=float(d["dt"]),
        )


@dataclass
class ProblemSpec:
    """One centroidal OCP instance over a fixed contact plan.

    com_lower/com_upper bound the CoM position per knot (row t for knot t;
    row 0 is kept for alignment but never constrains anything because the
    initial state is eliminated). Velocity and angular momentum are
    unbounded. Weights are diagonal: per-coordinate running and terminal
    9-vectors for the state cost, and a per-axis 3-vector for the force cost.
    """

    mass: float
    gravity: np.ndarray
    mu: float
    plan: ContactPlan
    com_lower: np.ndarray   # (T+1, 3)
    com_upper: np.ndarray   # (T+1, 3)
    x_nom: StateTrajectory
    weights_x_running: np.ndarray   # (9,)
    weights_x_terminal: np.ndarray  # (9,)
    weights_f: np.ndarray           # (3,)
    x_init: CentroidalState

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float).reshape(3)
        self.com_lower = np.asarray(self.com_lower, dtype=float)
        self.com_upper = np.asarray(self.com_upper, dtype=float)
        self.weights_x_running = np.asarray(self.weights_x_running, dtype=float).reshape(9)
        self.weights_x_terminal = np.asarray(self.weights_x_terminal, dtype=float).reshape(9)
        self.weights_f = np.asarray(self.weights_f, dtype=float).reshape(3)
        if self.mass <= 0.0:
            raise ValueError("mass must be positive")
        if self.mu <= 0.0:
            raise ValueError("mu must be positive")
        for w in (self.weights_x_running, self.weights_x_terminal, self.weights_f):
            if (w < 0.0).any():
                raise ValueError("weights must be nonnegative")
        T = self.plan.horizon
        if self.x_nom.horizon != T:
            raise DimensionError("x_nom horizon does not match plan")
        if self.com_lower.shape != (T + 1, 3) or self.com_upper.shape != (T + 1, 3):
            raise DimensionError("com bounds must have shape (T+1, 3)")
        both = np.isfinite(self.com_lower) & np.isfinite(self.com_upper)
        if (self.com_lower[both] > self.com_upper[both]).any():
            raise ValueError("com_lower exceeds com_upper")

    @property
    def horizon(self) -> int:
        return self.plan.horizon

    @property
    def n_eff(self) -> int:
        return self.plan.n_eff

    @property
    def dt(self) -> float:
        return self.plan.dt

    # Expanded quantities over the free variable block (knots 1..T).

    def state_weight_diag(self) -> np.ndarray:
        T = self.horizon
        d = np.tile(self.weights_x_running, T)
        d[9 * (T - 1):] = self.weights_x_terminal
        return d

    def state_nominal_flat(self) -> np.ndarray:
        return self.x_nom.states[1:].ravel().copy()

    def state_bounds_flat(self) -> tuple[np.ndarray, np.ndarray]:
        T = self.horizon
        lower = np.full((T, 9), -np.inf)
        upper = np.full((T, 9), np.inf)
        lower[:, 0:3] = self.com_lower[1:]
        upper[:, 0:3] = self.com_upper[1:]
        return lower.ravel(), upper.ravel()

    def force_weight_diag(self) -> np.ndarray:
        return np.tile(self.weights_f, self.horizon * self.n_eff)

    def to_json_dict(self) -> dict:
        return {
            "mass": self.mass,
            "gravity": self.gravity.tolist(),
            "mu": self.mu,
            "plan": self.plan.to_json_dict(),
            "com_bounds": {
                "lower": self.com_lower.tolist(),
                "upper": self.com_upper.tolist(),
            },
            "x_nom": self.x_nom.states.tolist(),
            "weights_x": {
                "running": self.weights_x_running.tolist(),
                "terminal": self.weights_x_terminal.tolist(),
            },
            "weights_f": self.weights_f.tolist(),
            "x_init": self.x_init.as_vector().tolist(),
        }

    @staticmethod
    def from_json_dict(d: dict) -> "ProblemSpec":
        plan = ContactPlan.from_json_dict(d["plan"])
        return ProblemSpec(
            mass=float(d["mass"]),
            gravity=np.asarray(d["gravity"], dtype=float),
            mu=float(d["mu"]),
            plan=plan,
            com_lower=np.asarray(d["com_bounds"]["lower"], dtype=float),
            com_upper=np.asarray(d["com_bounds"]["upper"], dtype=float),
            x_nom=StateTrajectory(np.asarray(d["x_nom"], dtype=float), plan.dt),
            weights_x_running=np.asarray(d["weights_x"]["running"], dtype=float),
            weights_x_terminal=np.asarray(d["weights_x"]["terminal"], dtype=float),
            weights_f=np.asarray(d["weights_f"], dtype=float),
            x_init=CentroidalState.from_vector(np.asarray(d["x_init"], dtype=float)),
        )


@dataclass(frozen=True)
class BiAffineSystem:
    """Sparse pair (A, b) with A z - b equal to the stacked dynamics residual."""

    A: sp.csr_matrix
    b: np.ndarray

    def residual(self, z: np.ndarray) -> np.ndarray:
        return self.A @ z - self.b


def integrate_step(state: CentroidalState, forces: np.ndarray, active: np.ndarray,
                   positions: np.ndarray, spec: ProblemSpec) -> CentroidalState:
    """Explicit-Euler update of the centroidal state over one knot interval.

    forces/active/positions are per-end-effector rows ((N, 3), (N,), (N, 3)).
    Point contacts: no contact torque term.
    """
    forces = np.asarray(forces, dtype=float).reshape(-1, 3)
    active = np.asarray(active, dtype=bool).reshape(-1)
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    if forces.shape[0] != spec.n_eff:
        raise DimensionError("forces must cover all end effectors")
    if not np.isfinite(state.as_vector()).all() or not np.isfinite(forces[active]).all():
        raise ValueError("non-finite state")
    dt = spec.dt
    f_net = (forces * active[:, None]).sum(axis=0)
    moment = (np.cross(positions - state.c, forces) * active[:, None]).sum(axis=0)
    return CentroidalState(
        c=state.c + state.cdot * dt,
        cdot=state.cdot + f_net * (dt / spec.mass) + spec.gravity * dt,
        k=state.k + moment * dt,
    )


def rollout(x0: CentroidalState, F: ForcePlan, spec: ProblemSpec) -> StateTrajectory:
    """Chain integrate_step under F; the result has zero dynamics residual."""
    if F.horizon != spec.horizon or F.n_eff != spec.n_eff:
        raise DimensionError("force plan does not match problem horizon")
    states = np.empty((spec.horizon + 1, 9))
    states[0] = x0.as_vector()
    cur = x0
    for t in range(spec.horizon):
        act, pos = spec.plan.row(t)
        cur = integrate_step(cur, F.forces[t], act, pos, spec)
        states[t + 1] = cur.as_vector()
    return StateTrajectory(states, spec.dt)


def dynamics_residual(X: StateTrajectory, F: ForcePlan, spec: ProblemSpec) -> np.ndarray:
    """Stacked residual of the discrete dynamics, length 9*T.

    Rows per step t: position (3), velocity (3), angular momentum (3).
    Uses X's own knot 0; zero iff X is the rollout of F from X.knot(0).
    """
    T = spec.horizon
    if X.horizon != T or F.horizon != T or F.n_eff != spec.n_eff:
        raise DimensionError("X/F dimensions do not match problem")
    dt = spec.dt
    c = X.states[:, 0:3]
    cdot = X.states[:, 3:6]
    k = X.states[:, 6:9]
    act = spec.plan.active[:, :, None]
    f_net = (F.forces * act).sum(axis=1)                                   # (T, 3)
    moment = (np.cross(spec.plan.positions - c[:-1, None, :], F.forces) * act).sum(axis=1)
    res = np.empty((T, 3, 3))
    res[:, 0] = c[1:] - c[:-1] - dt * cdot[:-1]
    res[:, 1] = cdot[1:] - cdot[:-1] - (dt / spec.mass) * f_net - dt * spec.gravity
    res[:, 2] = k[1:] - k[:-1] - dt * moment
    return res.reshape(-1)


def build_state_system(F: ForcePlan, spec: ProblemSpec) -> BiAffineSystem:
    """Rearrange the dynamics as A(F) X_free = b(F) over knots 1..T.

    The initial state is eliminated: its contribution is folded into the
    t = 0 rows of b, so A is square (9T x 9T) and full rank.
    """
    T = spec.horizon
    N = spec.n_eff
    if F.horizon != T or F.n_eff != N:
        raise DimensionError("force plan does not match problem horizon")
    dt = spec.dt
    n = 9 * T
    act = spec.plan.active[:, :, None]
    f_net = (F.forces * act).sum(axis=1)                                   # (T, 3)
    torque = (np.cross(spec.plan.positions, F.forces) * act).sum(axis=1)   # (T, 3)

    rows = [np.arange(n)]
    cols = [np.arange(n)]
    vals = [np.ones(n)]
    if T > 1:
        # -I on the previous knot for every component.
        r = np.arange(9, n)
        rows.append(r)
        cols.append(r - 9)
        vals.append(np.full(n - 9, -1.0))
        # position rows also couple to the previous knot's velocity.
        r = (9 * np.arange(1, T))[:, None] + np.arange(3)
        rows.append(r.ravel())
        cols.append((r - 6).ravel())
        vals.append(np.full(3 * (T - 1), -dt))
        # angular-momentum rows couple to the previous knot's CoM position
        # through -dt * skew(net force).
        fs = f_net[1:]
        base_r = 9 * np.arange(1, T) + 6
        base_c = 9 * np.arange(0, T - 1)
        sk_r = np.array([0, 0, 1, 1, 2, 2])
        sk_c = np.array([1, 2, 0, 2, 0, 1])
        rows.append((base_r[:, None] + sk_r).ravel())
        cols.append((base_c[:, None] + sk_c).ravel())
        sk_v = np.stack([-fs[:, 2], fs[:, 1], fs[:, 2], -fs[:, 0], -fs[:, 1], fs[:, 0]], axis=1)
        vals.append((-dt * sk_v).ravel())

    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )

    b = np.zeros((T, 3, 3))
    b[:, 1] = (dt / spec.mass) * f_net + dt * spec.gravity
    b[:, 2] = dt * torque
    # t = 0 rows absorb the fixed initial state.
    x0 = spec.x_init
    b[0, 0] = x0.c + dt * x0.cdot
    b[0, 1] += x0.cdot
    act0, pos0 = spec.plan.row(0)
    m0 = (np.cross(pos0 - x0.c, F.forces[0]) * act0[:, None]).sum(axis=0)
    b[0, 2] = x0.k + dt * m0
    return BiAffineSystem(A, b.reshape(-1))


def build_force_system(X: StateTrajectory, spec: ProblemSpec) -> BiAffineSystem:
    """Rearrange the dynamics as A(X) F = b(X).

    Columns of inactive (t, j) entries are identically zero, which carries
    the contact complementarity into the force subproblem by construction.
    """
    T = spec.horizon
    N = spec.n_eff
    if X.horizon != T:
        raise DimensionError("state trajectory does not match problem horizon")
    dt = spec.dt
    n_rows = 9 * T
    n_cols = 3 * N * T
    c = X.states[:, 0:3]
    cdot = X.states[:, 3:6]
    k = X.states[:, 6:9]

    t_idx, j_idx = np.nonzero(spec.plan.active)
    col0 = 3 * (t_idx * N + j_idx)

    # velocity rows: -(dt/m) I per active contact.
    rv = (9 * t_idx + 3)[:, None] + np.arange(3)
    cv = col0[:, None] + np.arange(3)
    vv = np.full(rv.size, -dt / spec.mass)

    # angular-momentum rows: -dt * skew(r - c_t) per active contact.
    d = spec.plan.positions[t_idx, j_idx] - c[t_idx]
    sk_r = np.array([0, 0, 1, 1, 2, 2])
    sk_c = np.array([1, 2, 0, 2, 0, 1])
    rk = (9 * t_idx + 6)[:, None] + sk_r
    ck = col0[:, None] + sk_c
    sk_v = np.stack([-d[:, 2], d[:, 1], d[:, 2], -d[:, 0], -d[:, 1], d[:, 0]], axis=1)
    vk = -dt * sk_v

    A = sp.csr_matrix(
        (np.concatenate([vv, vk.ravel()]),
         (np.concatenate([rv.ravel(), rk.ravel()]),
          np.concatenate([cv.ravel(), ck.ravel()]))),
        shape=(n_rows, n_cols),
    )

    b = np.empty((T, 3, 3))
    b[:, 0] = -(c[1:] - c[:-1] - dt * cdot[:-1])
    b[:, 1] = -(cdot[1:] - cdot[:-1] - dt * spec.gravity)
    b[:, 2] = -(k[1:] - k[:-1])
    return BiAffineSystem(A, b.reshape(-1))


def com_box_from_plan(plan: ContactPlan, half_widths: np.ndarray,
                      center_offset: np.ndarray,
                      fallback_center: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-knot CoM box centered on the active-contact centroid.

    During full flight the most recent stance centroid is held; before any
    stance, fallback_center is used. center_offset lifts the box off the
    contact plane (typically (0, 0, nominal height)).
    """
    half_widths = np.asarray(half_widths, dtype=float).reshape(3)
    center_offset = np.asarray(center_offset, dtype=float).reshape(3)
    T = plan.horizon
    lower = np.empty((T + 1, 3))
    upper = np.empty((T + 1, 3))
    last = np.asarray(fallback_center, dtype=float).reshape(3)
    for t in range(T + 1):
        row = min(t, T - 1)
        act = plan.active[row]
        if act.any():
            last = plan.positions[row][act].mean(axis=0)
        center = last + center_offset
        lower[t] = center - half_widths
        upper[t] = center + half_widths
    return lower, upper

"""Cyclic gait scheduling, footstep adaptation, and nominal trajectories.

A gait is a phase pattern: effector j is in stance whenever the wrapped
phase ((t_elapsed + t*dt)/gait_duration + offset_j) mod 1 falls below the
stance fraction. Touchdown locations come from a velocity-based heuristic
around the nominal hip, and the nominal state trajectory rides the desired
velocity at a fixed height with a constant angular-momentum reference
derived from the orientation error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import ContactPlan, StateTrajectory

# Wrapped-phase comparisons get a hair of slack so knots that land exactly
# on a stance boundary resolve the same way regardless of rounding.
_PHASE_EPS = 1e-9

#: stance offsets, fraction of the gait cycle, order (FL, FR, HL, HR)
GAIT_PHASE_OFFSETS = {
    "trot": (0.0, 0.5, 0.5, 0.0),
    "jump": (0.0, 0.0, 0.0, 0.0),
    "bound": (0.0, 0.0, 0.5, 0.5),
}


@dataclass
class GaitParams:
    stance_duration: float
    gait_duration: float
    dt: float
    n_knots: int
    phase_offsets: np.ndarray

    def __post_init__(self):
        self.phase_offsets = np.asarray(self.phase_offsets, dtype=float).reshape(-1)
        if not 0.0 < self.stance_duration <= self.gait_duration:
            raise ValueError("need 0 < stance_duration <= gait_duration")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.n_knots < 2:
            raise ValueError("n_knots must be >= 2")

    @property
    def n_eff(self) -> int:
        return self.phase_offsets.size

    @property
    def stance_ratio(self) -> float:
        return self.stance_duration / self.gait_duration


def standard_gait(name: str, dt: float = None, n_knots: int = None) -> GaitParams:
    """Stock quadruped gaits: trot, jump, bound."""
    table = {
        "trot": (0.15, 0.3, 0.03, 10),
        "jump": (0.2, 0.5, 0.05, 10),
        "bound": (0.15, 0.3, 0.05, 12),
    }
    if name not in table:
        raise ValueError(f"unknown gait '{name}'")
    stance, cycle, dt0, knots0 = table[name]
    return GaitParams(
        stance_duration=stance,
        gait_duration=cycle,
        dt=dt if dt is not None else dt0,
        n_knots=n_knots if n_knots is not None else knots0,
        phase_offsets=np.array(GAIT_PHASE_OFFSETS[name]),
    )


@dataclass(frozen=True)
class Quaternion:
    """Unit quaternion, scalar-last (x, y, z, w)."""

    x: float
    y: float
    z: float
    w: float

    def __post_init__(self):
        n = math.sqrt(self.x**2 + self.y**2 + self.z**2 + self.w**2)
        if abs(n - 1.0) > 1e-9:
            raise ValueError("quaternion must be unit norm")

    @staticmethod
    def identity() -> "Quaternion":
        return Quaternion(0.0, 0.0, 0.0, 1.0)

    @staticmethod
    def from_axis_angle(axis, angle: float) -> "Quaternion":
        axis = np.asarray(axis, dtype=float).reshape(3)
        axis = axis / np.linalg.norm(axis)
        s = math.sin(angle / 2.0)
        return Quaternion(axis[0] * s, axis[1] * s, axis[2] * s, math.cos(angle / 2.0))

    def conjugate(self) -> "Quaternion":
        return Quaternion(-self.x, -self.y, -self.z, self.w)

    def __mul__(self, o: "Quaternion") -> "Quaternion":
        x1, y1, z1, w1 = self.x, self.y, self.z, self.w
        x2, y2, z2, w2 = o.x, o.y, o.z, o.w
        return Quaternion(
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        )

    def log(self) -> np.ndarray:
        """Rotation vector (axis * angle) of the quaternion, shortest arc."""
        v = np.array([self.x, self.y, self.z])
        w = self.w
        if w < 0.0:
            v, w = -v, -w
        s = float(np.linalg.norm(v))
        if s < 1e-12:
            return 2.0 * v
        return (2.0 * math.atan2(s, w) / s) * v


def k_nom(q0: Quaternion, q_des: Quaternion, w: np.ndarray) -> np.ndarray:
    """Angular-momentum reference from the base orientation error.

    Elementwise weight times the log of the relative rotation taking q_des
    to q0, expressed in the world frame (q0 * q_des^-1), shortest arc. Zero
    when the orientations agree; swapping the arguments negates it.
    """
    w = np.asarray(w, dtype=float).reshape(3)
    a = (q0.x, q0.y, q0.z, q0.w)
    b = (q_des.x, q_des.y, q_des.z, q_des.w)
    if a == b or a == tuple(-v for v in b):
        return np.zeros(3)
    rel = q0 * q_des.conjugate()
    return w * rel.log()


def raibert_footstep(hip_nominal: np.ndarray, v_actual: np.ndarray,
                     v_des: np.ndarray, stance_duration: float, k_gain: float,
                     terrain_height: Callable[[float, float], float] = None) -> np.ndarray:
    """Touchdown location: hip plus half-stance travel plus velocity feedback.

    z is forced to the terrain height (flat ground 0 by default).
    """
    if stance_duration <= 0.0:
        raise ValueError("stance_duration must be positive")
    hip = np.asarray(hip_nominal, dtype=float).reshape(3)
    va = np.asarray(v_actual, dtype=float).reshape(3)
    vd = np.asarray(v_des, dtype=float).reshape(3)
    r = hip + va * (stance_duration / 2.0) + k_gain * (va - vd)
    z = 0.0 if terrain_height is None else float(terrain_height(r[0], r[1]))
    return np.array([r[0], r[1], z])


def make_cyclic_plan(gait: GaitParams, hip_offsets: np.ndarray, t_elapsed: float,
                     com: np.ndarray, v_actual: np.ndarray, v_des: np.ndarray,
                     k_gain: float = 0.03,
                     terrain_height: Callable[[float, float], float] = None) -> ContactPlan:
    """Contact schedule for the horizon starting at elapsed time t_elapsed.

    Knot t covers time t_elapsed + t*dt. Each stance segment gets one
    touchdown location, computed at the segment's touchdown instant (which
    may predate the horizon for stances already underway) and held constant
    through the stance. Hip references are advanced along v_des to the
    touchdown instant so future steps track the commanded motion.
    """
    hip_offsets = np.asarray(hip_offsets, dtype=float).reshape(-1, 3)
    if hip_offsets.shape[0] != gait.n_eff:
        raise ValueError("hip_offsets count does not match phase_offsets")
    com = np.asarray(com, dtype=float).reshape(3)
    T = gait.n_knots
    N = gait.n_eff
    ratio = gait.stance_ratio
    active = np.zeros((T, N), dtype=bool)
    positions = np.zeros((T, N, 3))

    times = t_elapsed + gait.dt * np.arange(T)
    phases = (times[:, None] / gait.gait_duration + gait.phase_offsets[None, :]) % 1.0
    phases[phases >= 1.0 - _PHASE_EPS] = 0.0
    active[:] = phases < ratio - _PHASE_EPS

    for j in range(N):
        t = 0
        while t < T:
            if not active[t, j]:
                t += 1
                continue
            touchdown = times[t] - phases[t, j] * gait.gait_duration
            hip = com + hip_offsets[j] + v_des * (touchdown - t_elapsed)
            r = raibert_footstep(hip, v_actual, v_des, gait.stance_duration,
                                 k_gain, terrain_height)
            while t < T and active[t, j]:
                positions[t, j] = r
                t += 1
    return ContactPlan(active=active, positions=positions, dt=gait.dt)


@dataclass
class NominalSpec:
    """Inputs of the nominal (heuristic, not necessarily feasible) trajectory."""

    v_des: np.ndarray
    z_des: float
    w_amom: np.ndarray
    q0: Quaternion = field(default_factory=Quaternion.identity)
    q_des: Quaternion = field(default_factory=Quaternion.identity)

    def __post_init__(self):
        self.v_des = np.asarray(self.v_des, dtype=float).reshape(3)
        self.w_amom = np.asarray(self.w_amom, dtype=float).reshape(3)
        if self.z_des <= 0.0:
            raise ValueError("z_des must be positive")
        if (self.w_amom < 0.0).any():
            raise ValueError("w_amom must be nonnegative")


def build_nominal(nominal: NominalSpec, gait: GaitParams, com0: np.ndarray) -> StateTrajectory:
    """Constant-velocity reference at the desired height.

    c_t rides v_des from com0 with z pinned to z_des, cdot_t = v_des, and
    every knot carries the same k_nom angular-momentum reference.
    """
    com0 = np.asarray(com0, dtype=float).reshape(3)
    T = gait.n_knots
    states = np.zeros((T + 1, 9))
    ts = gait.dt * np.arange(T + 1)
    states[:, 0] = com0[0] + nominal.v_des[0] * ts
    states[:, 1] = com0[1] + nominal.v_des[1] * ts
    states[:, 2] = nominal.z_des
    states[:, 3:6] = nominal.v_des
    states[:, 6:9] = k_nom(nominal.q0, nominal.q_des, nominal.w_amom)
    return StateTrajectory(states, gait.dt)

"""Scenario documents: everything a run needs, in one JSON file.

A scenario fixes the plant (mass, gravity, friction), the gait and nominal
references, solver and MPC settings, the CoM box geometry, and any
disturbances. Helpers here turn a scenario plus a measured state into a
concrete ProblemSpec for the solver.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .admm import AdmmConfig
from .fista import FistaConfig
from .gait import (
    GaitParams,
    NominalSpec,
    Quaternion,
    build_nominal,
    make_cyclic_plan,
    standard_gait,
)
from .model import CentroidalState, ProblemSpec, com_box_from_plan


class ScenarioError(ValueError):
    """Scenario file cannot be parsed; the message names the offending field."""


@dataclass
class MpcConfig:
    replan_hz: float = 20.0
    control_hz: float = 1000.0
    horizon_knots: int = 10
    lag_model: str = "none"          # none | fixed | measured
    lag_ms: float = 0.0
    scenario_duration: float = 2.0
    warm_start: bool = True

    def __post_init__(self):
        if self.control_hz < self.replan_hz:
            raise ValueError("control_hz must be >= replan_hz")
        if self.lag_model not in ("none", "fixed", "measured"):
            raise ValueError("lag_model must be none, fixed, or measured")
        if self.lag_model == "fixed" and self.lag_ms < 0.0:
            raise ValueError("lag_ms must be nonnegative")
        if self.scenario_duration <= 0.0:
            raise ValueError("scenario_duration must be positive")


@dataclass
class Disturbance:
    """External push: force over [start, start + duration).

    direction_deg, when given, rotates the force about z by that planar
    angle. offset, when given, is the application point relative to the CoM
    and adds the corresponding moment.
    """

    start: float
    duration: float
    force: np.ndarray
    direction_deg: Optional[float] = None
    offset: Optional[np.ndarray] = None

    def __post_init__(self):
        self.force = np.asarray(self.force, dtype=float).reshape(3)
        if self.offset is not None:
            self.offset = np.asarray(self.offset, dtype=float).reshape(3)
        if self.duration <= 0.0:
            raise ValueError("duration must be positive")

    def applied_force(self) -> np.ndarray:
        if self.direction_deg is None:
            return self.force
        a = np.deg2rad(self.direction_deg)
        ca, sa = np.cos(a), np.sin(a)
        fx, fy, fz = self.force
        return np.array([ca * fx - sa * fy, sa * fx + ca * fy, fz])

    def active_at(self, t: float) -> bool:
        return self.start <= t < self.start + self.duration


@dataclass
class Weights:
    x_running: np.ndarray
    x_terminal: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        self.x_running = np.asarray(self.x_running, dtype=float).reshape(9)
        self.x_terminal = np.asarray(self.x_terminal, dtype=float).reshape(9)
        self.f = np.asarray(self.f, dtype=float).reshape(3)


@dataclass
class Scenario:
    name: str
    mass: float
    gravity: np.ndarray
    mu: float
    gait: GaitParams
    hip_offsets: np.ndarray
    nominal: NominalSpec
    weights: Weights
    admm: AdmmConfig
    mpc: MpcConfig
    com_half_widths: np.ndarray
    com_center_offset: np.ndarray
    disturbances: list[Disturbance] = field(default_factory=list)
    v_des_schedule: list[tuple[float, np.ndarray]] = field(default_factory=list)
    k_gain: float = 0.03
    x_init: Optional[CentroidalState] = None

    def __post_init__(self):
        self.gravity = np.asarray(self.gravity, dtype=float).reshape(3)
        self.hip_offsets = np.asarray(self.hip_offsets, dtype=float).reshape(-1, 3)
        self.com_half_widths = np.asarray(self.com_half_widths, dtype=float).reshape(3)
        self.com_center_offset = np.asarray(self.com_center_offset, dtype=float).reshape(3)

    def initial_state(self) -> CentroidalState:
        if self.x_init is not None:
            return self.x_init
        return CentroidalState(
            c=np.array([0.0, 0.0, self.nominal.z_des]),
            cdot=np.zeros(3),
            k=np.zeros(3),
        )

    def v_des_at(self, t: float) -> np.ndarray:
        v = self.nominal.v_des
        for t_step, v_step in self.v_des_schedule:
            if t >= t_step:
                v = v_step
        return v


def build_problem_spec(scenario: Scenario, state: CentroidalState,
                       t_elapsed: float, v_des: Optional[np.ndarray] = None) -> ProblemSpec:
    """ProblemSpec for the horizon starting at t_elapsed from the given state."""
    if v_des is None:
        v_des = scenario.v_des_at(t_elapsed)
    plan = make_cyclic_plan(scenario.gait, scenario.hip_offsets, t_elapsed,
                            com=state.c, v_actual=state.cdot, v_des=v_des,
                            k_gain=scenario.k_gain)
    nominal = NominalSpec(v_des=v_des, z_des=scenario.nominal.z_des,
                          w_amom=scenario.nominal.w_amom,
                          q0=scenario.nominal.q0, q_des=scenario.nominal.q_des)
    x_nom = build_nominal(nominal, scenario.gait, com0=state.c)
    fallback = np.array([state.c[0], state.c[1], 0.0])
    lower, upper = com_box_from_plan(plan, scenario.com_half_widths,
                                     scenario.com_center_offset, fallback)
    return ProblemSpec(
        mass=scenario.mass,
        gravity=scenario.gravity,
        mu=scenario.mu,
        plan=plan,
        com_lower=lower,
        com_upper=upper,
        x_nom=x_nom,
        weights_x_running=scenario.weights.x_running,
        weights_x_terminal=scenario.weights.x_terminal,
        weights_f=scenario.weights.f,
        x_init=state,
    )


def _require(d: dict, key: str, where: str = "scenario"):
    if key not in d:
        raise ScenarioError(f"missing required field '{key}' in {where}")
    return d[key]


def _quat(v) -> Quaternion:
    x, y, z, w = (float(q) for q in v)
    return Quaternion(x, y, z, w)


def scenario_from_dict(d: dict) -> Scenario:
    mass = float(_require(d, "mass"))
    gravity = np.asarray(_require(d, "gravity"), dtype=float)
    mu = float(_require(d, "mu"))

    g = _require(d, "gait")
    if "name" in g:
        gait = standard_gait(g["name"], dt=g.get("dt"), n_knots=g.get("n_knots"))
    else:
        gait = GaitParams(
            stance_duration=float(_require(g, "stance_duration", "gait")),
            gait_duration=float(_require(g, "gait_duration", "gait")),
            dt=float(_require(g, "dt", "gait")),
            n_knots=int(_require(g, "n_knots", "gait")),
            phase_offsets=np.asarray(_require(g, "phase_offsets", "gait"), dtype=float),
        )

    nom = _require(d, "nominal")
    nominal = NominalSpec(
        v_des=np.asarray(_require(nom, "v_des", "nominal"), dtype=float),
        z_des=float(_require(nom, "z_des", "nominal")),
        w_amom=np.asarray(_require(nom, "w_amom", "nominal"), dtype=float),
        q0=_quat(nom.get("q0", (0.0, 0.0, 0.0, 1.0))),
        q_des=_quat(nom.get("q_des", (0.0, 0.0, 0.0, 1.0))),
    )

    w = _require(d, "weights")
    weights = Weights(
        x_running=np.asarray(_require(w, "x_running", "weights"), dtype=float),
        x_terminal=np.asarray(_require(w, "x_terminal", "weights"), dtype=float),
        f=np.asarray(_require(w, "f", "weights"), dtype=float),
    )

    a = d.get("admm", {})
    inner = a.get("inner", {})
    admm = AdmmConfig(
        rho=float(a.get("rho", 100.0)),
        eps_dyn=float(a.get("eps_dyn", 1e-3)),
        max_iter=int(a.get("max_iter", 50)),
        inner=FistaConfig(
            max_iter=int(inner.get("max_iter", 1000)),
            grad_tol=float(inner.get("grad_tol", 1e-5)),
            l0=float(inner.get("l0", 0.01)),
            beta_ls=float(inner.get("beta_ls", 2.0)),
        ),
    )

    m = d.get("mpc", {})
    mpc = MpcConfig(
        replan_hz=float(m.get("replan_hz", 20.0)),
        control_hz=float(m.get("control_hz", 1000.0)),
        horizon_knots=int(m.get("horizon_knots", gait.n_knots)),
        lag_model=str(m.get("lag_model", "none")),
        lag_ms=float(m.get("lag_ms", 0.0)),
        scenario_duration=float(m.get("scenario_duration", 2.0)),
        warm_start=bool(m.get("warm_start", True)),
    )

    box = _require(d, "com_box")
    disturbances = [
        Disturbance(
            start=float(_require(dd, "start", "disturbance")),
            duration=float(_require(dd, "duration", "disturbance")),
            force=np.asarray(_require(dd, "force", "disturbance"), dtype=float),
            direction_deg=(float(dd["direction_deg"]) if dd.get("direction_deg") is not None else None),
            offset=(np.asarray(dd["offset"], dtype=float) if dd.get("offset") is not None else None),
        )
        for dd in d.get("disturbances", [])
    ]
    schedule = [
        (float(row[0]), np.asarray(row[1:4], dtype=float))
        for row in d.get("v_des_schedule", [])
    ]
    x_init = None
    if d.get("x_init") is not None:
        x_init = CentroidalState.from_vector(np.asarray(d["x_init"], dtype=float))

    return Scenario(
        name=str(d.get("name", "scenario")),
        mass=mass,
        gravity=gravity,
        mu=mu,
        gait=gait,
        hip_offsets=np.asarray(_require(d, "hip_offsets"), dtype=float),
        nominal=nominal,
        weights=weights,
        admm=admm,
        mpc=mpc,
        com_half_widths=np.asarray(_require(box, "half_widths", "com_box"), dtype=float),
        com_center_offset=np.asarray(_require(box, "center_offset", "com_box"), dtype=float),
        disturbances=disturbances,
        v_des_schedule=schedule,
        k_gain=float(d.get("k_gain", 0.03)),
        x_init=x_init,
    )


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ScenarioError(f"invalid JSON in scenario file: {e}") from e
    return scenario_from_dict(doc)


# Solo-scale defaults shared by the stock scenarios.
_BASE = {
    "mass": 2.5,
    "gravity": [0.0, 0.0, -9.81],
    "mu": 0.8,
    "hip_offsets": [
        [0.15, 0.10, 0.0],    # FL
        [0.15, -0.10, 0.0],   # FR
        [-0.15, 0.10, 0.0],   # HL
        [-0.15, -0.10, 0.0],  # HR
    ],
    "nominal": {
        "v_des": [0.0, 0.0, 0.0],
        "z_des": 0.2,
        "w_amom": [1.0, 1.0, 1.0],
    },
    "weights": {
        "x_running": [100.0, 100.0, 200.0, 20.0, 20.0, 20.0, 20.0, 20.0, 20.0],
        "x_terminal": [100.0, 100.0, 200.0, 20.0, 20.0, 20.0, 20.0, 20.0, 20.0],
        "f": [2e-4, 2e-4, 2e-4],
    },
    "com_box": {
        "half_widths": [0.25, 0.25, 0.15],
        "center_offset": [0.0, 0.0, 0.2],
    },
    "admm": {"rho": 100.0, "eps_dyn": 1e-3, "max_iter": 50},
}


def builtin_scenario(name: str) -> dict:
    """Stock scenario documents (JSON-serializable dicts)."""
    base = json.loads(json.dumps(_BASE))
    base["name"] = name
    if name == "hover":
        base["gait"] = {"stance_duration": 0.3, "gait_duration": 0.3,
                        "dt": 0.05, "n_knots": 2,
                        "phase_offsets": [0.0, 0.0, 0.0, 0.0]}
        base["mass"] = 1.0
        base["nominal"]["z_des"] = 0.2
        # tiny force regularization keeps the converged forces within a
        # hair of the equality-constrained optimum at every rho
        base["weights"]["f"] = [1e-5, 1e-5, 1e-5]
        base["mpc"] = {"scenario_duration": 2.0}
    elif name == "standing":
        base["gait"] = {"stance_duration": 0.3, "gait_duration": 0.3,
                        "dt": 0.03, "n_knots": 10,
                        "phase_offsets": [0.0, 0.0, 0.0, 0.0]}
        base["mpc"] = {"replan_hz": 20.0, "control_hz": 1000.0,
                       "scenario_duration": 2.0}
    elif name in ("trot", "jump", "bound"):
        base["gait"] = {"name": name}
        # flight-heavy gaits need a stiffer dynamics penalty to converge
        # inside the iteration cap
        base["admm"]["rho"] = {"trot": 300.0, "jump": 1000.0, "bound": 1000.0}[name]
        base["mpc"] = {"replan_hz": 20.0, "control_hz": 1000.0,
                       "scenario_duration": 3.0}
    elif name == "trot_velocity":
        base["gait"] = {"name": "trot"}
        base["admm"]["rho"] = 300.0
        base["nominal"]["v_des"] = [0.5, 0.0, 0.0]
        base["v_des_schedule"] = [
            [0.0, 0.5, 0.0, 0.0],
            [6.0, 0.0, 0.0, 0.0],
            [7.0, -0.5, 0.0, 0.0],
        ]
        base["mpc"] = {"replan_hz": 20.0, "control_hz": 1000.0,
                       "scenario_duration": 13.0}
    elif name == "trot_push":
        base["gait"] = {"name": "trot"}
        base["admm"]["rho"] = 300.0
        base["disturbances"] = [
            {"start": 0.7, "duration": 0.3, "force": [8.0, 0.0, 0.0]},
        ]
        base["mpc"] = {"replan_hz": 20.0, "control_hz": 1000.0,
                       "scenario_duration": 3.0}
    else:
        raise ScenarioError(f"unknown builtin scenario '{name}'")
    return base

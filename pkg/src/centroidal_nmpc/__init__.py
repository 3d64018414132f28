"""Biconvex centroidal trajectory optimization and MPC for legged robots."""

from .admm import AdmmConfig, AdmmResult, AdmmSolver, admm_solve, objective_value, violation
from .fista import (
    BoxProx,
    ConeProx,
    ConvexSubproblem,
    DivergenceError,
    FistaConfig,
    FistaResult,
    IdentityProx,
    backtrack_step,
    box_project,
    fista_minimize,
    soc_project,
)
from .gait import (
    GaitParams,
    NominalSpec,
    Quaternion,
    build_nominal,
    k_nom,
    make_cyclic_plan,
    raibert_footstep,
    standard_gait,
)
from .model import (
    BiAffineSystem,
    CentroidalState,
    ContactPlan,
    DimensionError,
    ForcePlan,
    ProblemSpec,
    StateTrajectory,
    build_force_system,
    build_state_system,
    com_box_from_plan,
    dynamics_residual,
    integrate_step,
    rollout,
)
from .scenario import (
    Disturbance,
    MpcConfig,
    Scenario,
    ScenarioError,
    Weights,
    build_problem_spec,
    builtin_scenario,
    load_scenario,
    scenario_from_dict,
)
from .simulator import (
    ActivePlan,
    PlanLagError,
    SimLog,
    SimulationAbort,
    apply_plan_lag,
    interpolate_forces,
    mpc_cost_metric,
    push_recovered,
    run_closed_loop,
)

__all__ = [name for name in dir() if not name.startswith("_")]

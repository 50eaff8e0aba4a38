"""Gaussian-beam ablation model and collision-aware laser orientation planning."""
from .geometry import AblationFrame, BeamParams, PointSet, ablate_point, ablate_set, incident_vector
from .field import CostParams, GridSpec, build_field, gaussian_bowl, halfspace, obstacle_cost
from .calibration import fit_gaussian
from .jacobian import dQ_dtheta, objective, objective_gradient
from .planner import PlannerConfig, plan

__version__ = "0.1.0"

__all__ = [
    "AblationFrame",
    "BeamParams",
    "PointSet",
    "ablate_point",
    "ablate_set",
    "incident_vector",
    "CostParams",
    "GridSpec",
    "build_field",
    "gaussian_bowl",
    "halfspace",
    "obstacle_cost",
    "fit_gaussian",
    "dQ_dtheta",
    "objective",
    "objective_gradient",
    "PlannerConfig",
    "plan",
]

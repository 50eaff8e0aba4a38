"""Box-constrained orientation planning by projected gradient descent.

Each iteration ranks the points by how much a trial step lowers their
cost, steps along the gradient of the top fraction only, and clamps the
result into the angle box. Point-robot traces at the bottom give every
surface point its own angles instead of one shared orientation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .field import (CostParams, ScalarField3, VectorField3, obstacle_cost,
                    obstacle_cost_grad, sample_scalar, sample_vector)
from .geometry import AblationFrame, BeamParams, PointSet, ablate_point
from .jacobian import dQ_dtheta, objective, objective_gradient

__all__ = [
    "PlannerConfig",
    "PlanResult",
    "NonFiniteGradientError",
    "project_box",
    "gd_step",
    "point_gains",
    "select_active",
    "rank_gains",
    "plan",
    "Trace",
    "point_robot_traces",
    "point_robot_trace",
    "final_costs",
    "RULES",
]


class NonFiniteGradientError(ValueError):
    pass


@dataclass
class PlannerConfig:
    alpha: float = 0.01
    max_iters: int = 200
    theta_init: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bounds: tuple = field(default_factory=lambda: (np.radians([-30.0] * 3), np.radians([30.0] * 3)))
    select_fraction: float = 0.30
    cost_tol: float = 1e-6
    stall_iters: int = 10
    selection: str = "probe"
    record_points: bool = False

    def __post_init__(self):
        self.theta_init = np.asarray(self.theta_init, dtype=float)
        lo, hi = (np.asarray(b, dtype=float) for b in self.bounds)
        self.bounds = (lo, hi)
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0 < self.select_fraction <= 1:
            raise ValueError("select_fraction must be in (0, 1]")
        if np.any(lo > hi):
            raise ValueError("lower bounds exceed upper bounds")
        if np.any(self.theta_init < lo) or np.any(self.theta_init > hi):
            raise ValueError("theta_init lies outside the bounds")
        if self.selection not in ("probe", "lagged"):
            raise ValueError("selection must be 'probe' or 'lagged'")


@dataclass
class PlanResult:
    theta_star: np.ndarray
    cost_trace: list
    termination: str
    clamp_events: int
    thetas: list
    active_sizes: list
    point_trajectories: list | None = None
    failed_points: int = 0

    @property
    def iterations(self) -> int:
        return len(self.cost_trace) - 1


def project_box(theta, bounds) -> np.ndarray:
    """Euclidean projection onto the box, i.e. a component-wise clamp."""
    lo, hi = bounds
    return np.minimum(np.maximum(np.asarray(theta, dtype=float), lo), hi)


def gd_step(theta, grad, alpha: float, bounds) -> np.ndarray:
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradientError(f"non-finite gradient {grad} at theta={theta}")
    return project_box(np.asarray(theta, dtype=float) - alpha * grad, bounds)


def point_gains(points, theta_k, theta_candidate, frame, beam, phi, cost):
    """Per-point change in cost when moving from ``theta_k`` to the candidate."""
    _, c_new, _ = objective(points, theta_candidate, frame, beam, phi, cost)
    _, c_old, _ = objective(points, theta_k, frame, beam, phi, cost)
    return c_new - c_old


def select_active(points, theta_k, theta_candidate, frame: AblationFrame, beam: BeamParams,
                  phi: ScalarField3, cost: CostParams, fraction: float) -> np.ndarray:
    """Indices of the ``ceil(fraction * n)`` points with the most negative gain."""
    n = len(points)
    if n == 0:
        raise ValueError("cannot select from an empty point set")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    gains = point_gains(points, theta_k, theta_candidate, frame, beam, phi, cost)
    return rank_gains(gains, fraction)


def rank_gains(gains, fraction: float) -> np.ndarray:
    gains = np.asarray(gains, dtype=float)
    n_sel = math.ceil(fraction * gains.size - 1e-9)
    order = np.lexsort((np.arange(gains.size), gains))  # gain first, then index
    return order[:n_sel]


def plan(points: PointSet, frame: AblationFrame, beam: BeamParams, phi: ScalarField3,
         grad_phi: VectorField3, cost: CostParams, cfg: PlannerConfig) -> PlanResult:
    """Minimize the summed obstacle cost over the angle box.

    With ``selection="probe"`` each iteration first takes a trial step with
    the gradient of all points, ranks per-point gains against that trial
    angle, then steps with the gradient of the selected points only. With
    ``selection="lagged"`` the points are ranked against the step just
    taken and used for the next one (the first step uses all points).
    """
    theta = project_box(cfg.theta_init, cfg.bounds)
    n = len(points)
    f, _, clamped = objective(points, theta, frame, beam, phi, cost)
    trace = [f]
    thetas = [theta.copy()]
    clamp_events = int(clamped.sum())
    trajectories = [ablate_point(points.points, theta, frame, beam)] if cfg.record_points else None
    active = np.arange(n)
    active_sizes = []
    failed = 0
    termination = "max_iters"
    quiet = 0

    def grad_over(idx):
        nonlocal failed
        g = objective_gradient(points, theta, frame, beam, phi, grad_phi, cost, idx)
        failed += int(g.failed.sum())
        return g.grad

    for _ in range(cfg.max_iters):
        full = grad_over(None) if cfg.selection == "probe" or active.size == n else None
        if full is not None and np.array_equal(gd_step(theta, full, cfg.alpha, cfg.bounds), theta):
            termination = "converged"  # projected gradient vanishes
            break
        if cfg.selection == "probe":
            trial = gd_step(theta, full, cfg.alpha, cfg.bounds)
            active = select_active(points, theta, trial, frame, beam, phi, cost,
                                   cfg.select_fraction)
            candidate = gd_step(theta, grad_over(active), cfg.alpha, cfg.bounds)
        else:
            g = full if active.size == n else grad_over(active)
            candidate = gd_step(theta, g, cfg.alpha, cfg.bounds)
        active_sizes.append(int(active.size))
        if cfg.selection == "lagged":
            active = select_active(points, theta, candidate, frame, beam, phi, cost,
                                   cfg.select_fraction)
        theta = candidate
        f_new, _, clamped = objective(points, theta, frame, beam, phi, cost)
        clamp_events += int(clamped.sum())
        quiet = quiet + 1 if abs(f_new - f) < cfg.cost_tol else 0
        f = f_new
        trace.append(f)
        thetas.append(theta.copy())
        if trajectories is not None:
            trajectories.append(ablate_point(points.points, theta, frame, beam))
        if quiet >= cfg.stall_iters:
            termination = "stalled"
            break

    return PlanResult(theta, trace, termination, clamp_events, thetas, active_sizes,
                      trajectories, failed)


# -- single point robots --------------------------------------------------------

RULES = ("ascent-phi", "descent-cost", "follow-reference")


@dataclass
class Trace:
    thetas: np.ndarray     # (steps + 1, N, 3)
    positions: np.ndarray  # (steps + 1, N, 3)
    phi: np.ndarray | None   # (steps + 1, N) sampled level set, if a field was given
    clamped: np.ndarray | None


def point_robot_traces(q, theta_init, frame: AblationFrame, beam: BeamParams, rule: str,
                       iters: int, alpha: float, bounds=None, phi=None, grad_phi=None,
                       cost: CostParams | None = None, reference=None) -> Trace:
    """Independent per-point angle updates for a batch of point robots.

    Every robot keeps its own angles and is re-ablated from its original
    surface position at each step, so ``positions[k]`` is where the point
    ends up after one pulse at ``thetas[k]``.

    Rules: ``ascent-phi`` climbs the level set, ``descent-cost`` descends the
    obstacle cost, ``follow-reference`` climbs along a fixed vector instead
    of the level-set gradient.
    """
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}; expected one of {RULES}")
    q = np.atleast_2d(np.asarray(q, dtype=float))
    n = q.shape[0]
    theta = np.broadcast_to(np.asarray(theta_init, dtype=float), (n, 3)).copy()
    if bounds is None:
        bounds = frame.bounds
    if rule != "follow-reference" and (phi is None or grad_phi is None):
        raise ValueError(f"rule {rule!r} needs phi and grad_phi")
    if rule == "descent-cost" and cost is None:
        raise ValueError("descent-cost needs cost parameters")
    if rule == "follow-reference":
        if reference is None:
            raise ValueError("follow-reference needs a reference vector")
        ref = np.broadcast_to(np.asarray(reference, dtype=float), (n, 3))

    thetas, positions, phis, flags = [], [], [], []
    for k in range(iters + 1):
        Q = ablate_point(q, theta, frame, beam)
        thetas.append(theta.copy())
        positions.append(Q)
        if phi is not None:
            vals, clamped = sample_scalar(phi, Q)
            phis.append(vals)
            flags.append(clamped)
        if k == iters:
            break
        J = dQ_dtheta(q, theta, frame, beam)
        if rule == "follow-reference":
            direction = ref
        else:
            direction, _ = sample_vector(grad_phi, Q)
        g = np.einsum("ni,nij->nj", direction, J)
        if rule == "descent-cost":
            dc = obstacle_cost_grad(phis[-1], cost)
            g = dc[:, None] * g
            g = np.where(dc[:, None] == 0.0, 0.0, g)
            step = -alpha * g
        else:
            step = alpha * g
        if not np.all(np.isfinite(step)):
            raise NonFiniteGradientError("non-finite point-robot update")
        theta = project_box(theta + step, bounds)

    return Trace(np.stack(thetas), np.stack(positions),
                 np.stack(phis) if phis else None, np.stack(flags) if flags else None)


def point_robot_trace(q_i, theta_init, frame, beam, rule, iters, alpha, **kw) -> Trace:
    """Single-robot convenience wrapper; arrays keep a leading robot axis of 1."""
    return point_robot_traces(np.asarray(q_i, dtype=float).reshape(1, 3), theta_init,
                              frame, beam, rule, iters, alpha, **kw)


def final_costs(trace: Trace, cost: CostParams) -> np.ndarray:
    return obstacle_cost(trace.phi[-1], cost)

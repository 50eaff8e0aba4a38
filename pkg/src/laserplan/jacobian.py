"""Analytical derivatives of the ablation kinematics and the collision objective.

The chain is ``dQ/dtheta = dQ/dv @ dv/dtheta``. Derivatives with respect to
``v`` treat ``v`` as a free 3-vector with the beam side fixed at ``L_ref``,
which is how the triangle construction parameterizes the projected distance.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .field import (CostParams, GridSpec, ScalarField3, VectorField3, obstacle_cost,
                    obstacle_cost_grad, sample_scalar, sample_vector, sobel_gradient)
from .geometry import (AblationFrame, BeamParams, PointSet, ablate_point,
                       elementary_rotations, incident_vector, projected_distance_sq)

__all__ = [
    "SingularConfigurationError",
    "d_sides_dv",
    "d_s2_dv",
    "dQ_dv",
    "dQ_dv_at",
    "dv_dtheta",
    "dQ_dtheta",
    "GradientResult",
    "objective",
    "objective_gradient",
    "central_difference",
    "GRADCHECK_COLUMNS",
    "check_configuration",
    "finite_difference_suite",
]


class SingularConfigurationError(ValueError):
    pass


def _b_vector(q, v, frame):
    return np.asarray(q, dtype=float) - frame.q_c + np.asarray(v, dtype=float) * frame.L_ref


def d_sides_dv_at(q, v, frame: AblationFrame):
    """Gradients of the three triangle sides with respect to ``v``."""
    bvec = _b_vector(q, v, frame)
    b = np.linalg.norm(bvec, axis=-1)
    if np.any(b <= 1e-12):
        raise SingularConfigurationError("query point coincides with the incident center")
    zero = np.zeros_like(bvec)
    return zero, bvec * frame.L_ref / b[..., None], zero.copy()


def d_sides_dv(q, theta, frame: AblationFrame):
    return d_sides_dv_at(q, incident_vector(theta, frame), frame)


def d_s2_dv_at(q, v, frame: AblationFrame):
    """Gradient of the squared projected distance with respect to ``v``.

    Only the ``b`` side depends on ``v``. With
    ``s^2 = (2a^2b^2 + 2b^2c^2 + 2c^2a^2 - a^4 - b^4 - c^4) / (4c^2)``,
    ``d(s^2)/db = b (a^2 + c^2 - b^2) / c^2`` and ``db/dv = L_ref bvec / b``,
    so the ``b`` factors cancel and the product is regular everywhere.
    """
    q = np.asarray(q, dtype=float)
    bvec = _b_vector(q, v, frame)
    a2 = np.sum((q - frame.q_c) ** 2, axis=-1)
    b2 = np.sum(bvec**2, axis=-1)
    c = frame.L_ref
    coef = (a2 + c * c - b2) / (c * c) * frame.L_ref
    return coef[..., None] * bvec


def d_s2_dv(q, theta, frame: AblationFrame):
    return d_s2_dv_at(q, incident_vector(theta, frame), frame)


def dQ_dv_at(q, v, frame: AblationFrame, beam: BeamParams):
    v = np.asarray(v, dtype=float)
    s2 = projected_distance_sq(q, v, frame)
    scale = beam.L_G * np.exp(s2 / (-2.0 * beam.sigma_G**2))
    ds2 = d_s2_dv_at(q, v, frame)
    outer = np.einsum("...i,...j->...ij", v, ds2) * (-1.0 / (2.0 * beam.sigma_G**2))
    eye = np.broadcast_to(np.eye(3), outer.shape)
    return scale[..., None, None] * (eye + outer)


def dQ_dv(q, theta, frame: AblationFrame, beam: BeamParams):
    return dQ_dv_at(q, incident_vector(theta, frame), frame, beam)


def dv_dtheta(theta, frame: AblationFrame):
    """Columns are ``dR/dtheta_j @ v0`` for j = x, y, z."""
    theta = np.asarray(theta, dtype=float)
    Rx, Ry, Rz = elementary_rotations(theta)
    c, s = np.cos(theta), np.sin(theta)
    zero = np.zeros(theta.shape[:-1])
    cx, cy, cz = c[..., 0], c[..., 1], c[..., 2]
    sx, sy, sz = s[..., 0], s[..., 1], s[..., 2]
    dRx = np.stack([np.stack([zero, zero, zero], -1),
                    np.stack([zero, -sx, -cx], -1),
                    np.stack([zero, cx, -sx], -1)], -2)
    dRy = np.stack([np.stack([-sy, zero, cy], -1),
                    np.stack([zero, zero, zero], -1),
                    np.stack([-cy, zero, -sy], -1)], -2)
    dRz = np.stack([np.stack([-sz, -cz, zero], -1),
                    np.stack([cz, -sz, zero], -1),
                    np.stack([zero, zero, zero], -1)], -2)
    v0 = frame.v0
    cols = [(dRx @ Ry @ Rz) @ v0, (Rx @ dRy @ Rz) @ v0, (Rx @ Ry @ dRz) @ v0]
    return np.stack(cols, axis=-1)


def dQ_dtheta(q, theta, frame: AblationFrame, beam: BeamParams):
    """Jacobian of the ablated position with respect to the incident angles."""
    return dQ_dv(q, theta, frame, beam) @ dv_dtheta(theta, frame)


@dataclass
class GradientResult:
    grad: np.ndarray          # (3,) sum over active points
    rows: np.ndarray          # (n_active, 3) per-point contributions
    active: np.ndarray        # indices the rows refer to
    phi: np.ndarray           # sampled level set at the ablated positions
    clamped: np.ndarray       # out-of-grid flags per active point
    failed: np.ndarray        # points excluded for non-finite contributions


def objective(points, theta, frame, beam, phi: ScalarField3, cost: CostParams):
    """Full collision objective and per-point costs at ``theta``."""
    pts = points.points if isinstance(points, PointSet) else np.asarray(points, dtype=float)
    Q = ablate_point(pts, theta, frame, beam)
    vals, clamped = sample_scalar(phi, Q)
    c = obstacle_cost(vals, cost)
    return float(np.sum(c)), c, clamped


def objective_gradient(points, theta, frame: AblationFrame, beam: BeamParams,
                       phi: ScalarField3, grad_phi: VectorField3, cost: CostParams,
                       active=None) -> GradientResult:
    """Sum over active points of ``dC/dPhi * gradPhi(Q)^T @ dQ/dtheta``."""
    pts = points.points if isinstance(points, PointSet) else np.asarray(points, dtype=float)
    if active is None:
        active = np.arange(pts.shape[0])
    active = np.sort(np.asarray(active, dtype=np.intp))
    q = pts[active]
    theta = np.asarray(theta, dtype=float)
    Q = ablate_point(q, theta, frame, beam)
    vals, clamped = sample_scalar(phi, Q)
    gphi, _ = sample_vector(grad_phi, Q)
    dc = obstacle_cost_grad(vals, cost)
    J = dQ_dtheta(q, theta, frame, beam)
    rows = dc[:, None] * np.einsum("ni,nij->nj", gphi, J)
    rows = np.where(dc[:, None] == 0.0, 0.0, rows)
    failed = ~np.all(np.isfinite(rows), axis=1)
    rows[failed] = 0.0
    total = np.zeros(3)
    for r in rows:  # fixed index order for bitwise-reproducible sums
        total += r
    return GradientResult(total, rows, active, vals, clamped, failed)


def central_difference(f, x, h: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of ``f`` at ``x``; columns index inputs."""
    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x), dtype=float)
    out = np.empty(f0.shape + x.shape)
    for j in range(x.size):
        e = np.zeros_like(x)
        e.flat[j] = h
        out[..., j] = (np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2.0 * h)
    return out


# -- finite-difference suite ----------------------------------------------------

GRADCHECK_COLUMNS = ("d_sides_dv", "d_s2_dv", "dQ_dv", "dv_dtheta", "dQ_dtheta", "objective")


def _rel(analytic, numeric, floor: float = 1e-8) -> float:
    a, f = np.asarray(analytic, float), np.asarray(numeric, float)
    return float(np.max(np.abs(a - f)) / max(np.max(np.abs(f)), floor))


def random_configuration(rng, min_cos: float = 0.1):
    """Frame, beam, angles and a query point.

    ``d(s^2)/dv`` scales with ``(q - q_c) . v`` and vanishes when the offset is
    perpendicular to the beam, where a central difference can no longer
    resolve it relative to roundoff. Draws with ``|cos| < min_cos`` are
    rejected; that regime is checked with an absolute bound instead.
    """
    v0 = rng.normal(size=3)
    v0 /= np.linalg.norm(v0)
    frame = AblationFrame(rng.uniform(-1, 1, 3), v0, float(rng.uniform(0.5, 2.0)))
    beam = BeamParams(float(rng.uniform(0.8, 2.0)), float(rng.uniform(0.4, 1.0)))
    theta = rng.uniform(-np.pi / 2, np.pi / 2, 3)
    v = incident_vector(theta, frame)
    while True:
        r = rng.normal(scale=beam.sigma_G, size=3)
        if abs(r @ v) >= min_cos * np.linalg.norm(r):
            return frame, beam, theta, frame.q_c + r


def affine_field(normal, offset, center, spacing=0.1, n=24):
    """Level set ``normal . (x - center) + offset`` on a grid centered at ``center``."""
    half = 0.5 * spacing * (n - 1)
    spec = GridSpec(tuple(np.asarray(center) - half), spacing, (n, n, n))
    values = (spec.centers() - center) @ np.asarray(normal) + offset
    phi = ScalarField3(spec, values)
    return phi, sobel_gradient(phi)


def check_configuration(rng, h: float = 1e-6, h_objective: float = 1e-5, n_points: int = 5) -> dict:
    """Relative errors of every analytical derivative against central differences."""
    frame, beam, theta, q = random_configuration(rng)
    v = incident_vector(theta, frame)
    out = {}

    def side_b(w):
        return np.linalg.norm(q - frame.q_c + w * frame.L_ref)

    _, db, _ = d_sides_dv_at(q, v, frame)
    out["d_sides_dv"] = _rel(db, central_difference(side_b, v, h))
    out["d_s2_dv"] = _rel(d_s2_dv_at(q, v, frame),
                          central_difference(lambda w: projected_distance_sq(q, w, frame, clamp=False), v, h))

    def Q_of_v(w):
        s2 = projected_distance_sq(q, w, frame, clamp=False)
        return q + w * beam.L_G * np.exp(s2 / (-2.0 * beam.sigma_G**2))

    out["dQ_dv"] = _rel(dQ_dv_at(q, v, frame, beam), central_difference(Q_of_v, v, h))
    out["dv_dtheta"] = _rel(dv_dtheta(theta, frame),
                            central_difference(lambda t: incident_vector(t, frame), theta, h))
    out["dQ_dtheta"] = _rel(dQ_dtheta(q, theta, frame, beam),
                            central_difference(lambda t: ablate_point(q, t, frame, beam), theta, h))

    # full objective on an affine level set, where sampled Sobel gradients are exact
    pts = frame.q_c + rng.normal(scale=beam.sigma_G, size=(n_points, 3))
    Q = ablate_point(pts, theta, frame, beam)
    center = Q.mean(axis=0)
    normal = rng.normal(size=3)
    normal *= rng.uniform(0.3, 1.0) / np.linalg.norm(normal)
    cost = CostParams(float(rng.uniform(0.3, 1.0)))
    while True:
        offset = float(rng.uniform(-1.0, 1.5))
        phi_q = (Q - center) @ normal + offset
        if np.min(np.abs(phi_q)) > 1e-2 and np.min(np.abs(phi_q - cost.epsilon)) > 1e-2:
            break
    # trilinear sampling and Sobel are exact on affine data, so a coarse grid suffices
    spacing = 0.25
    n = int(np.ceil(2 * (np.max(np.abs(Q - center)) + 0.5) / spacing)) + 3
    phi, grad_phi = affine_field(normal, offset, center, spacing, n)
    g = objective_gradient(pts, theta, frame, beam, phi, grad_phi, cost).grad
    u = rng.normal(size=3)
    u /= np.linalg.norm(u)
    f = lambda t: objective(pts, t, frame, beam, phi, cost)[0]  # noqa: E731
    fd = (f(theta + h_objective * u) - f(theta - h_objective * u)) / (2 * h_objective)
    out["objective"] = float(abs(g @ u - fd) / max(abs(fd), np.linalg.norm(g), 1e-8))
    return out


def finite_difference_suite(n_configs: int = 1000, seed: int = 0) -> list[dict]:
    rng = np.random.default_rng(seed)
    return [check_configuration(rng) for _ in range(n_configs)]

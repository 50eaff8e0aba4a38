"""Laser-surface geometry: incident angles to ablated surface positions.

All functions broadcast over leading dimensions, so a single point ``(3,)``
and a cloud ``(N, 3)`` go through the same code path. Angles are radians.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "AblationFrame",
    "BeamParams",
    "PointSet",
    "rotation_matrix",
    "elementary_rotations",
    "incident_vector",
    "incident_center",
    "projected_distance_sq",
    "projected_distance",
    "depth_of_cut",
    "ablate_point",
    "ablate_set",
]


def _vec3(x, name) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite")
    return a


@dataclass(frozen=True)
class BeamParams:
    """Gaussian ablation profile: peak depth ``L_G`` and width ``sigma_G`` (mm)."""

    L_G: float
    sigma_G: float

    def __post_init__(self):
        if not (self.L_G > 0 and self.sigma_G > 0):
            raise ValueError(f"beam parameters must be positive, got {self}")


@dataclass(frozen=True)
class AblationFrame:
    """Geometric configuration of one laser pulse.

    ``q_c`` is the ablation center on the surface, ``v0`` the incident
    direction at zero angles and ``L_ref`` the (arbitrary) distance from the
    ablation center back to the virtual beam origin.
    """

    q_c: np.ndarray
    v0: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, -1.0]))
    L_ref: float = 1.0
    theta_lo: np.ndarray = field(default_factory=lambda: np.full(3, -np.pi))
    theta_hi: np.ndarray = field(default_factory=lambda: np.full(3, np.pi))

    def __post_init__(self):
        object.__setattr__(self, "q_c", _vec3(self.q_c, "q_c"))
        object.__setattr__(self, "v0", _vec3(self.v0, "v0"))
        object.__setattr__(self, "theta_lo", _vec3(self.theta_lo, "theta_lo"))
        object.__setattr__(self, "theta_hi", _vec3(self.theta_hi, "theta_hi"))
        if abs(np.linalg.norm(self.v0) - 1.0) > 1e-12:
            raise ValueError("v0 must be a unit vector")
        if not self.L_ref > 0:
            raise ValueError("L_ref must be positive")
        if np.any(self.theta_lo > self.theta_hi):
            raise ValueError("theta_lo must not exceed theta_hi")

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.theta_lo, self.theta_hi

    def replace(self, **changes) -> "AblationFrame":
        kw = dict(q_c=self.q_c, v0=self.v0, L_ref=self.L_ref,
                  theta_lo=self.theta_lo, theta_hi=self.theta_hi)
        kw.update(changes)
        return AblationFrame(**kw)


@dataclass(frozen=True)
class PointSet:
    """Ordered surface points; the row index is the point's identity."""

    points: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(p)):
            raise ValueError("point coordinates must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __getitem__(self, i) -> np.ndarray:
        return self.points[i]

    @property
    def indices(self) -> np.ndarray:
        return np.arange(len(self))

    @classmethod
    def from_csv(cls, path) -> "PointSet":
        text = Path(path).read_text().splitlines()
        if not text or [h.strip() for h in text[0].split(",")] != ["x", "y", "z"]:
            raise ValueError(f"{path}: expected header 'x,y,z'")
        rows = [line for line in text[1:] if line.strip()]
        if not rows:
            return cls(np.empty((0, 3)))
        return cls(np.array([[float(c) for c in r.split(",")] for r in rows]))

    def to_csv(self, path) -> None:
        lines = ["x,y,z"]
        lines += [f"{x!r},{y!r},{z!r}" for x, y, z in self.points.tolist()]
        Path(path).write_text("\n".join(lines) + "\n")


def elementary_rotations(theta):
    """Return ``(R_x, R_y, R_z)`` for angles of shape ``(..., 3)``."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    one = np.ones(theta.shape[:-1])
    zero = np.zeros(theta.shape[:-1])
    cx, cy, cz = c[..., 0], c[..., 1], c[..., 2]
    sx, sy, sz = s[..., 0], s[..., 1], s[..., 2]
    Rx = np.stack([np.stack([one, zero, zero], -1),
                   np.stack([zero, cx, -sx], -1),
                   np.stack([zero, sx, cx], -1)], -2)
    Ry = np.stack([np.stack([cy, zero, sy], -1),
                   np.stack([zero, one, zero], -1),
                   np.stack([-sy, zero, cy], -1)], -2)
    Rz = np.stack([np.stack([cz, -sz, zero], -1),
                   np.stack([sz, cz, zero], -1),
                   np.stack([zero, zero, one], -1)], -2)
    return Rx, Ry, Rz


def rotation_matrix(theta) -> np.ndarray:
    """R = R_x(theta_x) @ R_y(theta_y) @ R_z(theta_z)."""
    Rx, Ry, Rz = elementary_rotations(theta)
    return Rx @ Ry @ Rz


def incident_vector(theta, frame: AblationFrame) -> np.ndarray:
    return np.einsum("...ij,j->...i", rotation_matrix(theta), frame.v0)


def incident_center(frame: AblationFrame, v) -> np.ndarray:
    return frame.q_c - np.asarray(v, dtype=float) * frame.L_ref


def _sides(q, v, frame):
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    a = np.linalg.norm(frame.q_c - q, axis=-1)
    b = np.linalg.norm(q - frame.q_c + v * frame.L_ref, axis=-1)
    return a, b, frame.L_ref


def projected_distance_sq(q, v, frame: AblationFrame, clamp: bool = True):
    """Squared triangle altitude onto the beam side, from Heron's formula.

    With ``clamp=False`` the raw polynomial is returned; it can dip below
    zero when ``v`` is not a unit vector (only derivative checks need that).
    """
    a, b, c = _sides(q, v, frame)
    # 16 * area^2, expanded Heron form
    h16 = 2 * a * a * b * b + 2 * b * b * c * c + 2 * c * c * a * a - a**4 - b**4 - c**4
    s2 = h16 / (4.0 * c * c)
    if clamp:
        s2 = np.maximum(s2, 0.0)
    return s2


def projected_distance(q, v, frame: AblationFrame):
    """Perpendicular distance from ``q`` to the beam axis through ``q_c``."""
    a, b, c = _sides(q, v, frame)
    p = 0.5 * (a + b + c)
    rad = np.maximum(p * (p - a) * (p - b) * (p - c), 0.0)
    return 2.0 * np.sqrt(rad) / c


def depth_of_cut(s, beam: BeamParams):
    s = np.asarray(s, dtype=float)
    return beam.L_G * np.exp(s * s / (-2.0 * beam.sigma_G**2))


def ablate_point(q, theta, frame: AblationFrame, beam: BeamParams) -> np.ndarray:
    """Surface position after one pulse: ``q + v(theta) * d``."""
    v = incident_vector(theta, frame)
    d = depth_of_cut(projected_distance(q, v, frame), beam)
    return np.asarray(q, dtype=float) + v * d[..., None]


def ablate_set(points: PointSet, theta, frame: AblationFrame, beam: BeamParams) -> PointSet:
    if len(points) == 0:
        return PointSet(np.empty((0, 3)))
    return PointSet(ablate_point(points.points, theta, frame, beam))

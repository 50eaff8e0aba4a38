"""Estimating the Gaussian ablation profile from measured cavities.

Measurements are projected into (projected distance, depth) samples, then a
Gaussian ``d = L_G exp(-s^2 / (2 sigma^2))`` is fitted by a log-linear
initialization followed by Levenberg-Marquardt refinement.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (AblationFrame, BeamParams, PointSet, ablate_set,
                       incident_vector, projected_distance)

__all__ = [
    "CavityMeasurement",
    "FitResult",
    "AlignmentError",
    "InsufficientDataError",
    "RankDeficiencyError",
    "project_measurement",
    "fit_gaussian",
    "synthesize_cavity",
    "patch_grid",
    "write_dataset",
    "read_dataset",
]


class AlignmentError(ValueError):
    pass


class InsufficientDataError(ValueError):
    pass


class RankDeficiencyError(ValueError):
    pass


@dataclass(frozen=True)
class CavityMeasurement:
    theta: np.ndarray
    cloud: PointSet
    frame: AblationFrame

    def __post_init__(self):
        if len(self.cloud) == 0:
            raise ValueError("cavity cloud is empty")


@dataclass(frozen=True)
class FitResult:
    beam: BeamParams | None
    L_G: float
    sigma_G: float
    rmse: float
    iterations: int
    converged: bool

    def to_dict(self) -> dict:
        return {"L_G": self.L_G, "sigma_G": self.sigma_G, "rmse": self.rmse,
                "iterations": self.iterations, "converged": self.converged}


def project_measurement(m: CavityMeasurement, pre_surface: PointSet):
    """Return ``(s, d)`` arrays: projected distance and depth per aligned point."""
    if len(pre_surface) != len(m.cloud):
        raise AlignmentError(
            f"pre-surface has {len(pre_surface)} points, cloud has {len(m.cloud)}")
    v = incident_vector(m.theta, m.frame)
    pre = pre_surface.points
    s = projected_distance(pre, v, m.frame)
    d = np.linalg.norm(m.cloud.points - pre, axis=1)
    return s, d


def _model(params, s):
    L, sig = params
    return L * np.exp(-s * s / (2.0 * sig * sig))


def _jac(params, s):
    L, sig = params
    e = np.exp(-s * s / (2.0 * sig * sig))
    return np.column_stack([e, L * e * s * s / sig**3])


def fit_gaussian(s, d, max_iter: int = 200, tol: float = 1e-10) -> FitResult:
    """Least-squares Gaussian fit to depth-vs-distance samples."""
    s = np.asarray(s, dtype=float).ravel()
    d = np.asarray(d, dtype=float).ravel()
    pos = d > 1e-12
    if pos.sum() < 3:
        raise InsufficientDataError("need at least 3 samples with positive depth")
    if np.ptp(s[pos]) == 0.0:
        raise RankDeficiencyError("all projected distances are identical")

    # log-linear start: ln d = ln L - s^2 / (2 sigma^2)
    slope, intercept = np.polyfit(s[pos] ** 2, np.log(d[pos]), 1)
    L0 = float(np.exp(intercept))
    sig0 = float(np.sqrt(-0.5 / slope)) if slope < 0 else float(np.std(s[pos]) or 1.0)
    x = np.array([L0, sig0])

    lam = 1e-3
    r = d - _model(x, s)
    sse = r @ r
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        J = _jac(x, s)
        A = J.T @ J
        g = J.T @ r
        while True:
            step = np.linalg.solve(A + lam * np.diag(np.diag(A)) + 1e-300 * np.eye(2), g)
            x_new = x + step
            r_new = d - _model(x_new, s)
            sse_new = r_new @ r_new
            if sse_new <= sse or lam > 1e12:
                break
            lam *= 10.0
        if sse_new <= sse:
            rel = np.max(np.abs(step) / np.maximum(np.abs(x), 1e-300))
            x, r, sse = x_new, r_new, sse_new
            lam = max(lam / 10.0, 1e-12)
            if rel < tol:
                converged = True
                break
        else:
            # no descent direction left: at the optimum to working precision
            converged = bool(np.all(np.abs(g) <= 1e-12 * max(1.0, sse)))
            break

    L, sig = float(x[0]), abs(float(x[1]))
    rmse = float(np.sqrt(sse / s.size))
    beam = BeamParams(L, sig) if (L > 0 and sig > 0) else None
    return FitResult(beam, L, sig, rmse, it, converged)


def patch_grid(center, v0, half_width: float, n: int) -> PointSet:
    """``n x n`` planar grid normal to ``v0`` centered on ``center``."""
    if n < 1:
        raise ValueError("grid must have at least one point per side")
    v0 = np.asarray(v0, dtype=float)
    # in-plane axes; for v0 = -z these are +x and +y
    helper = np.array([1.0, 0.0, 0.0]) if abs(v0[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = helper - (helper @ v0) * v0
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(e1, v0)
    t = np.linspace(-half_width, half_width, n) if n > 1 else np.zeros(1)
    u, w = np.meshgrid(t, t, indexing="ij")
    pts = np.asarray(center, dtype=float) + u.reshape(-1, 1) * e1 + w.reshape(-1, 1) * e2
    return PointSet(pts)


def synthesize_cavity(beam: BeamParams, frame: AblationFrame, theta, grid_spec: dict,
                      noise_sigma: float = 0.0, seed: int = 0):
    """Synthetic pre-surface and post-ablation measurement.

    ``grid_spec`` holds ``half_width`` and ``n`` for a planar patch around
    ``q_c``; an optional ``height`` callable ``(x, y) -> dz`` displaces it
    along ``-v0`` to make a height-mapped surface.
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be nonnegative")
    pre = patch_grid(frame.q_c, frame.v0, grid_spec["half_width"], int(grid_spec["n"]))
    if len(pre) == 0:
        raise ValueError("empty grid")
    height = grid_spec.get("height")
    if height is not None:
        pts = pre.points.copy()
        pts -= np.outer(height(pts[:, 0], pts[:, 1]), frame.v0)
        pre = PointSet(pts)
    post = ablate_set(pre, theta, frame, beam).points
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        post = post + rng.normal(0.0, noise_sigma, size=post.shape)
    theta = np.asarray(theta, dtype=float)
    return pre, CavityMeasurement(theta, PointSet(post), frame)


def _frame_to_dict(frame: AblationFrame) -> dict:
    return {"q_c": frame.q_c.tolist(), "v0": frame.v0.tolist(), "L_ref": frame.L_ref,
            "bounds_deg": [np.degrees(frame.theta_lo).tolist(), np.degrees(frame.theta_hi).tolist()]}


def write_dataset(directory, pre: PointSet, frame: AblationFrame, angles_deg, clouds) -> None:
    """Write ``angle_<i>_rep_<j>.csv`` files and ``manifest.json``.

    ``clouds[i][j]`` is the post-ablation PointSet for angle ``i``, repeat ``j``.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pre.to_csv(directory / "pre_surface.csv")
    for i, reps in enumerate(clouds):
        for j, cloud in enumerate(reps):
            cloud.to_csv(directory / f"angle_{i}_rep_{j}.csv")
    manifest = {
        "frame": _frame_to_dict(frame),
        "pre_surface": "pre_surface.csv",
        "angles_deg": [list(map(float, a)) for a in angles_deg],
        "repeats": len(clouds[0]) if clouds else 0,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def read_dataset(directory):
    """Load a measurement directory; returns ``(pre_surface, measurements)``."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    f = manifest["frame"]
    lo, hi = f.get("bounds_deg", [[-180.0] * 3, [180.0] * 3])
    frame = AblationFrame(f["q_c"], f.get("v0", [0.0, 0.0, -1.0]), f.get("L_ref", 1.0),
                          np.radians(lo), np.radians(hi))
    pre = PointSet.from_csv(directory / manifest.get("pre_surface", "pre_surface.csv"))
    angles = manifest.get("angles_deg", [])
    if not angles:
        raise InsufficientDataError("manifest lists no angles")
    out = []
    for i, a in enumerate(angles):
        for j in range(int(manifest.get("repeats", 1))):
            cloud = PointSet.from_csv(directory / f"angle_{i}_rep_{j}.csv")
            out.append(CavityMeasurement(np.radians(np.asarray(a, dtype=float)), cloud, frame))
    return pre, out

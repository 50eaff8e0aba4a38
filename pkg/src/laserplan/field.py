"""Voxelized signed distance level set, its Sobel gradient and the obstacle cost.

Voxel ``(i, j, k)`` has its center at ``origin + spacing * (i, j, k)``.
Fields store values as ``(nx, ny, nz)`` (scalar) or ``(nx, ny, nz, 3)``
(vector) arrays indexed by voxel.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit
from scipy import ndimage

__all__ = [
    "GridSpec",
    "ScalarField3",
    "VectorField3",
    "CostParams",
    "DegenerateBoundaryError",
    "gaussian_bowl",
    "halfspace",
    "occupancy_from_boundary",
    "signed_edt",
    "squared_edt",
    "sobel_gradient",
    "sample_scalar",
    "sample_vector",
    "obstacle_cost",
    "obstacle_cost_grad",
    "build_field",
    "save_field",
    "load_field",
]


class DegenerateBoundaryError(ValueError):
    """The boundary leaves the grid entirely inside or entirely outside."""


@dataclass(frozen=True)
class GridSpec:
    origin: tuple
    spacing: float
    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(x) for x in self.origin))
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        if len(self.origin) != 3 or len(self.dims) != 3:
            raise ValueError("origin and dims must have three components")
        if not self.spacing > 0:
            raise ValueError("spacing must be positive")
        if min(self.dims) < 2:
            raise ValueError("each grid dimension must be at least 2")

    def centers(self) -> np.ndarray:
        """Voxel center coordinates, shape ``(nx, ny, nz, 3)``."""
        axes = [o + self.spacing * np.arange(n) for o, n in zip(self.origin, self.dims)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def to_dict(self) -> dict:
        return {"origin": list(self.origin), "spacing": self.spacing, "dims": list(self.dims)}


@dataclass(frozen=True)
class ScalarField3:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.spec.dims:
            raise ValueError("field values do not match grid dims")


@dataclass(frozen=True)
class VectorField3:
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.spec.dims + (3,):
            raise ValueError("vector field values do not match grid dims")


@dataclass(frozen=True)
class CostParams:
    epsilon: float = 0.6

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")


# -- boundaries ---------------------------------------------------------------

def gaussian_bowl(amplitude: float, sigma_b: float, apex=(0.0, 0.0, 0.0)):
    """Inside test for the region above a Gaussian-shaped depression.

    Relative to ``apex``, a point is inside when
    ``z > -amplitude * exp(-(x^2 + y^2) / (2 sigma_b^2))``.
    ``sigma_b = inf`` gives the half-space ``z > -amplitude``.
    """
    ax, ay, az = (float(c) for c in apex)

    def inside(p):
        x, y, z = p[..., 0] - ax, p[..., 1] - ay, p[..., 2] - az
        if np.isinf(sigma_b):
            floor = -amplitude * np.ones_like(z)
        else:
            floor = -amplitude * np.exp(-(x * x + y * y) / (2.0 * sigma_b**2))
        return z > floor

    return inside


def halfspace(normal, offset: float):
    """Inside where ``normal . p < offset``."""
    n = np.asarray(normal, dtype=float)

    def inside(p):
        return p @ n < offset

    return inside


def occupancy_from_boundary(spec: GridSpec, inside) -> np.ndarray:
    occ = np.asarray(inside(spec.centers()), dtype=bool)
    if occ.all() or not occ.any():
        raise DegenerateBoundaryError("boundary classifies every voxel identically")
    return occ


# -- exact EDT ----------------------------------------------------------------

@njit(cache=True)
def _envelope_1d(f, out, v, z):
    """Lower envelope of parabolas ``f[q] + (x - q)^2``; infinite samples skipped."""
    n = f.shape[0]
    k = -1
    for q in range(n):
        if f[q] == np.inf:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -np.inf
            z[1] = np.inf
            continue
        r = v[k]
        s = ((f[q] + q * q) - (f[r] + r * r)) / (2.0 * (q - r))
        while s <= z[k]:
            k -= 1
            r = v[k]
            s = ((f[q] + q * q) - (f[r] + r * r)) / (2.0 * (q - r))
        k += 1
        v[k] = q
        z[k] = s
        z[k + 1] = np.inf
    if k < 0:
        for q in range(n):
            out[q] = np.inf
        return
    j = 0
    for q in range(n):
        while z[j + 1] < q:
            j += 1
        d = q - v[j]
        out[q] = d * d + f[v[j]]


@njit(cache=True)
def _edt_axis0(a):
    """Apply the 1D transform along axis 0 of a 3D array (returns a new array)."""
    n0, n1, n2 = a.shape
    out = np.empty_like(a)
    f = np.empty(n0)
    g = np.empty(n0)
    v = np.empty(n0, dtype=np.int64)
    z = np.empty(n0 + 1)
    for j in range(n1):
        for k in range(n2):
            for i in range(n0):
                f[i] = a[i, j, k]
            _envelope_1d(f, g, v, z)
            for i in range(n0):
                out[i, j, k] = g[i]
    return out


def squared_edt(features: np.ndarray) -> np.ndarray:
    """Squared distance in voxel units from each voxel to the nearest feature voxel.

    Separable exact transform: a 1D lower-envelope pass along each axis.
    Values are exact integers (stored as float) when any feature exists.
    """
    d = np.where(features, 0.0, np.inf)
    for axis in range(3):
        d = np.moveaxis(_edt_axis0(np.ascontiguousarray(np.moveaxis(d, axis, 0))), 0, axis)
    return d


def signed_edt(occupancy: np.ndarray, spec: GridSpec) -> ScalarField3:
    """Positive distance to the outside set on inside voxels, negative on outside voxels."""
    occ = np.asarray(occupancy, dtype=bool)
    if occ.shape != spec.dims:
        raise ValueError("occupancy shape does not match grid dims")
    if occ.all() or not occ.any():
        raise DegenerateBoundaryError("occupancy has no inside/outside partition")
    to_outside = np.sqrt(squared_edt(~occ))
    to_inside = np.sqrt(squared_edt(occ))
    phi = np.where(occ, to_outside, -to_inside) * spec.spacing
    return ScalarField3(spec, phi)


def sobel_gradient(phi: ScalarField3) -> VectorField3:
    """Sobel gradient, scaled so a unit-slope ramp gives a unit vector."""
    if min(phi.spec.dims) < 3:
        raise ValueError("Sobel gradient needs at least 3 voxels per axis")
    scale = 32.0 * phi.spec.spacing
    comps = [ndimage.sobel(phi.values, axis=ax, mode="nearest") / scale for ax in range(3)]
    return VectorField3(phi.spec, np.stack(comps, axis=-1))


# -- sampling -----------------------------------------------------------------

def _trilinear_setup(spec: GridSpec, points):
    p = np.asarray(points, dtype=float)
    if not np.all(np.isfinite(p)):
        raise ValueError("sample points must be finite")
    dims = np.array(spec.dims)
    u = (p - np.array(spec.origin)) / spec.spacing
    clamped = np.any((u < 0) | (u > dims - 1), axis=-1)
    u = np.clip(u, 0, dims - 1)
    i0 = np.minimum(np.floor(u).astype(np.intp), dims - 2)
    t = u - i0
    return i0, t, clamped


def _trilinear(values, i0, t):
    ix, iy, iz = i0[..., 0], i0[..., 1], i0[..., 2]
    tx, ty, tz = (t[..., k] for k in range(3))
    if values.ndim == 4:
        tx, ty, tz = tx[..., None], ty[..., None], tz[..., None]
    c000 = values[ix, iy, iz]
    c100 = values[ix + 1, iy, iz]
    c010 = values[ix, iy + 1, iz]
    c110 = values[ix + 1, iy + 1, iz]
    c001 = values[ix, iy, iz + 1]
    c101 = values[ix + 1, iy, iz + 1]
    c011 = values[ix, iy + 1, iz + 1]
    c111 = values[ix + 1, iy + 1, iz + 1]
    c00 = c000 + tx * (c100 - c000)
    c10 = c010 + tx * (c110 - c010)
    c01 = c001 + tx * (c101 - c001)
    c11 = c011 + tx * (c111 - c011)
    c0 = c00 + ty * (c10 - c00)
    c1 = c01 + ty * (c11 - c01)
    return c0 + tz * (c1 - c0)


def sample_scalar(phi: ScalarField3, points):
    """Trilinear samples and a per-point flag marking clamped (out-of-grid) points."""
    i0, t, clamped = _trilinear_setup(phi.spec, points)
    return _trilinear(phi.values, i0, t), clamped


def sample_vector(g: VectorField3, points):
    i0, t, clamped = _trilinear_setup(g.spec, points)
    return _trilinear(g.values, i0, t), clamped


# -- obstacle cost ------------------------------------------------------------

def obstacle_cost(phi_val, p: CostParams):
    """Zero beyond epsilon, quadratic in the margin band, linear inside the obstacle."""
    phi = np.asarray(phi_val, dtype=float)
    eps = p.epsilon
    return np.where(phi <= 0, -phi + 0.5 * eps,
                    np.where(phi <= eps, (phi - eps) ** 2 / (2.0 * eps), 0.0))


def obstacle_cost_grad(phi_val, p: CostParams):
    # left-limit derivative at the branch points
    phi = np.asarray(phi_val, dtype=float)
    eps = p.epsilon
    return np.where(phi <= 0, -1.0, np.where(phi <= eps, (phi - eps) / eps, 0.0))


# -- construction and serialization -------------------------------------------

def build_field(spec: GridSpec, inside):
    """Occupancy, signed EDT and Sobel gradient in one go."""
    phi = signed_edt(occupancy_from_boundary(spec, inside), spec)
    return phi, sobel_gradient(phi)


def save_field(directory, phi: ScalarField3, grad: VectorField3 | None = None) -> None:
    """JSON header plus CSV values with x varying fastest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = phi.spec.to_dict() | {"order": "x-fastest"}
    (directory / "field.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    flat = phi.values.reshape(-1, order="F")
    (directory / "phi.csv").write_text("phi\n" + "\n".join(repr(x) for x in flat.tolist()) + "\n")
    if grad is not None:
        g = grad.values.reshape(-1, 3, order="F")
        rows = (f"{a!r},{b!r},{c!r}" for a, b, c in g.tolist())
        (directory / "grad_phi.csv").write_text("gx,gy,gz\n" + "\n".join(rows) + "\n")


def load_field(directory):
    directory = Path(directory)
    header = json.loads((directory / "field.json").read_text())
    spec = GridSpec(header["origin"], header["spacing"], header["dims"])
    vals = np.loadtxt(directory / "phi.csv", skiprows=1, delimiter=",")
    phi = ScalarField3(spec, vals.reshape(spec.dims, order="F"))
    gpath = directory / "grad_phi.csv"
    if gpath.exists():
        g = np.loadtxt(gpath, skiprows=1, delimiter=",").reshape(spec.dims + (3,), order="F")
        grad = VectorField3(spec, g)
    else:
        grad = sobel_gradient(phi)
    return phi, grad

"""Independent reference implementations used by several test modules."""
import itertools
import math

import numpy as np
from scipy.spatial.distance import cdist


def brute_force_signed_edt(occ, spacing):
    """O(n^2) nearest-opposite-voxel distance, positive on inside voxels."""
    idx = np.argwhere(np.ones(occ.shape, dtype=bool)).astype(float)
    flat = occ.reshape(-1)
    inside, outside = idx[flat], idx[~flat]
    out = np.empty(flat.size)
    if inside.size and outside.size:
        out[flat] = cdist(inside, outside).min(axis=1)
        out[~flat] = -cdist(outside, inside).min(axis=1)
    return out.reshape(occ.shape) * spacing


def sobel_kernel(axis):
    """3x3x3 kernel: central difference along ``axis``, [1, 2, 1] smoothing across."""
    smooth = np.array([1.0, 2.0, 1.0])
    diff = np.array([-1.0, 0.0, 1.0])
    parts = [diff if a == axis else smooth for a in range(3)]
    return np.einsum("i,j,k->ijk", *parts)


def direct_sobel(values, spacing):
    """Gradient by explicit correlation with edge replication."""
    padded = np.pad(values, 1, mode="edge")
    nx, ny, nz = values.shape
    out = np.zeros(values.shape + (3,))
    for axis in range(3):
        k = sobel_kernel(axis)
        for di, dj, dk in itertools.product(range(3), repeat=3):
            out[..., axis] += k[di, dj, dk] * padded[di:di + nx, dj:dj + ny, dk:dk + nz]
    return out / (32.0 * spacing)


def cost_reference(phi, eps):
    if phi <= 0:
        return -phi + 0.5 * eps
    if phi <= eps:
        return (phi - eps) ** 2 / (2 * eps)
    return 0.0


def bowl_inside_reference(p, amplitude, sigma_b, apex=(0.0, 0.0, 0.0)):
    x, y, z = (p[i] - apex[i] for i in range(3))
    return z > -amplitude * math.exp(-(x * x + y * y) / (2 * sigma_b * sigma_b))

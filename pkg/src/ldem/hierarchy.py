"""Coarse/dense grid coupling: population aggregation and field transfer.

Aggregation averages dense element values over a fixed-radius neighborhood
of each coarse element centroid; transfer interpolates a coarse nodal field
bilinearly at dense node positions.
"""

from __future__ import annotations

import math
import warnings

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree


def aggregate_population(coarse_centroids: NDArray, dense_centroids: NDArray,
                         dense_values: NDArray, radius: float) -> NDArray:
    """Mean of dense values strictly within `radius` of each coarse centroid.

    A coarse element whose neighborhood is empty falls back to the value at
    the nearest dense centroid and emits a warning.
    """
    coarse_centroids = np.asarray(coarse_centroids, dtype=np.float64)
    dense_centroids = np.asarray(dense_centroids, dtype=np.float64)
    dense_values = np.asarray(dense_values, dtype=np.float64)

    tree = cKDTree(dense_centroids)
    neighborhoods = tree.query_ball_point(coarse_centroids, radius)
    out = np.empty(coarse_centroids.shape[0])
    fallbacks = 0
    for i, idx in enumerate(neighborhoods):
        if idx:
            # The tree includes points at exactly `radius`; ties are excluded.
            d = np.linalg.norm(dense_centroids[idx] - coarse_centroids[i], axis=1)
            idx = np.asarray(idx)[d < radius]
        if len(idx) > 0:
            out[i] = dense_values[idx].mean()
        else:
            _, nearest = tree.query(coarse_centroids[i])
            out[i] = dense_values[nearest]
            fallbacks += 1
    if fallbacks:
        warnings.warn(f"{fallbacks} coarse element(s) had no dense centroid "
                      f"within radius {radius:g}; used nearest value instead")
    return out


def bilinear_transfer(node_field: NDArray, query_points: NDArray) -> NDArray:
    """Interpolate a square-grid nodal field at points of the unit square.

    Args:
        node_field: (n*n, k) or (n*n,) values on the regular n x n node
            lattice, row-major with x fastest.
        query_points: (m, 2) positions in [0, 1]^2.

    Returns:
        (m, k) or (m,) interpolated values; exact at nodes and exact for
        fields affine in (x, y).
    """
    node_field = np.asarray(node_field, dtype=np.float64)
    flat = node_field.ndim == 1
    if flat:
        node_field = node_field[:, None]
    n = math.isqrt(node_field.shape[0])
    if n * n != node_field.shape[0] or n < 2:
        raise ValueError(f"nodal field of length {node_field.shape[0]} is not "
                         "a square lattice with n >= 2")
    grid = node_field.reshape(n, n, -1)

    q = np.asarray(query_points, dtype=np.float64)
    sx = q[:, 0] * (n - 1)
    sy = q[:, 1] * (n - 1)
    i = np.clip(sx.astype(np.int64), 0, n - 2)
    j = np.clip(sy.astype(np.int64), 0, n - 2)
    t = (sx - i)[:, None]
    u = (sy - j)[:, None]

    out = ((1 - t) * (1 - u) * grid[j, i]
           + t * (1 - u) * grid[j, i + 1]
           + (1 - t) * u * grid[j + 1, i]
           + t * u * grid[j + 1, i + 1])
    return out[:, 0] if flat else out

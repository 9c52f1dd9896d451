"""Iterative diffusion reference method for the method comparisons.

The face populations are splatted onto an m x m node raster, the raster
density is advanced by an explicit 5-point heat step with mirrored (no-flux)
boundaries, and the triangle-grid vertices ride along the velocity field
u = -grad(rho)/rho sampled bilinearly.  With no-flux walls the normal
velocity vanishes on the boundary, so the square maps onto itself; the
density-equalizing displacement accumulates in the tracked vertices as the
raster diffuses toward uniformity.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .geometry import TriGrid2D


class DiffusionDiverged(RuntimeError):
    """Raised when tracked vertices blow up; carries where and how far."""

    def __init__(self, iteration: int, max_coordinate: float):
        super().__init__(
            f"diffusion advection diverged at iteration {iteration}: "
            f"max |coordinate| = {max_coordinate:.3g}")
        self.iteration = iteration
        self.max_coordinate = max_coordinate


def stability_limit(m: int) -> float:
    """Largest explicit-Euler step for the 5-point Laplacian on this raster."""
    h = 1.0 / (m - 1)
    return h * h / 4.0


def default_step(m: int) -> float:
    return 0.5 * stability_limit(m)


def large_step(m: int) -> float:
    """Oversized step used for the failure-mode comparison.

    Just past the stability bound: the advection overshoot folds the map
    within tens of iterations while the raster oscillation still grows
    slowly enough that the vertices stay in view instead of aborting.
    """
    return 1.1 * stability_limit(m)


# Iteration budget for the failure-mode comparison runs.  Enough for the
# oversized step to wreck bijectivity, but covering so little diffusion
# time at a reduced step that the map stays far from equalized.
FAILURE_BUDGET = 200


def splat_density(grid: TriGrid2D, populations: NDArray, m: int) -> NDArray:
    """Area-weighted splat of face populations onto an m x m node raster.

    Both the population mass and the reference face area are deposited with
    bilinear hat weights at each face centroid; the nodal density is their
    ratio, so a uniform population yields an exactly uniform raster.  Nodes
    no centroid reaches are filled from already-filled neighbours.
    """
    populations = np.asarray(populations, dtype=np.float64)
    centroids = grid.centroids()
    areas = grid.areas(grid.vertices)

    g = centroids * (m - 1)
    ij = np.clip(g.astype(int), 0, m - 2)
    f = g - ij
    ix, iy = ij[:, 0], ij[:, 1]
    fx, fy = f[:, 0], f[:, 1]

    mass = np.zeros((m, m))
    area = np.zeros((m, m))
    for dx, dy in ((0, 0), (1, 0), (0, 1), (1, 1)):
        wx = fx if dx else 1.0 - fx
        wy = fy if dy else 1.0 - fy
        w = wx * wy
        np.add.at(mass, (iy + dy, ix + dx), w * populations)
        np.add.at(area, (iy + dy, ix + dx), w * areas)

    empty = area == 0.0
    while np.any(empty):
        # dilate filled values one ring at a time
        fm = np.where(empty, 0.0, mass)
        fa = np.where(empty, 0.0, area)
        counts = np.zeros((m, m))
        nm = np.zeros((m, m))
        na = np.zeros((m, m))
        for axis, shift in ((0, 1), (0, -1), (1, 1), (1, -1)):
            nm += np.roll(fm, shift, axis=axis)
            na += np.roll(fa, shift, axis=axis)
            counts += np.roll((~empty).astype(float), shift, axis=axis)
        grow = empty & (counts > 0)
        if not np.any(grow):
            raise ValueError("splatting produced an unreachable raster region")
        mass[grow] = nm[grow] / counts[grow]
        area[grow] = na[grow] / counts[grow]
        empty = empty & ~grow

    return mass / area


@dataclass
class DiffusionState:
    """Raster density plus the advected vertices of the triangle grid."""

    rho: NDArray        # (m, m), rho[iy, ix] at (ix*h, iy*h)
    positions: NDArray  # (num_vertices, 2)
    dt: float
    iteration: int = 0

    @property
    def m(self) -> int:
        return self.rho.shape[0]

    def uniformity(self) -> float:
        return float(self.rho.std() / self.rho.mean())


def initial_state(grid: TriGrid2D, populations: NDArray, m: int = 64,
                  dt: float | None = None) -> DiffusionState:
    if dt is None:
        dt = default_step(m)
    if dt > stability_limit(m):
        warnings.warn(
            f"step {dt:.3g} exceeds the explicit stability limit "
            f"{stability_limit(m):.3g}; the raster will go unstable",
            RuntimeWarning, stacklevel=2)
    rho = splat_density(grid, populations, m)
    return DiffusionState(rho=rho, positions=grid.vertices.copy(), dt=dt)


def _mirrored(rho: NDArray) -> NDArray:
    # ghost ring reflected about the boundary nodes: grad . n = 0
    return np.pad(rho, 1, mode="reflect")


def diffusion_step(state: DiffusionState) -> DiffusionState:
    """One explicit heat step plus one forward-Euler advection of vertices."""
    m = state.m
    h = 1.0 / (m - 1)
    p = _mirrored(state.rho)

    lap = (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]
           - 4.0 * state.rho) / (h * h)

    # central-difference velocity on the same mirrored extension
    gx = (p[1:-1, 2:] - p[1:-1, :-2]) / (2.0 * h)
    gy = (p[2:, 1:-1] - p[:-2, 1:-1]) / (2.0 * h)
    ux = -gx / state.rho
    uy = -gy / state.rho

    state.positions += state.dt * _sample(ux, uy, state.positions, m)
    state.rho += state.dt * lap
    state.iteration += 1

    coords = state.positions
    if not np.all(np.isfinite(coords)) or np.max(np.abs(coords)) > 10.0:
        worst = float(np.nanmax(np.abs(coords)))
        raise DiffusionDiverged(state.iteration, worst)
    return state


def _sample(ux: NDArray, uy: NDArray, points: NDArray, m: int) -> NDArray:
    """Bilinear sample of the velocity rasters, clamped to the unit square."""
    g = np.clip(points, 0.0, 1.0) * (m - 1)
    ij = np.clip(g.astype(int), 0, m - 2)
    f = g - ij
    ix, iy = ij[:, 0], ij[:, 1]
    fx, fy = f[:, 0], f[:, 1]
    out = np.empty_like(points)
    for k, u in enumerate((ux, uy)):
        out[:, k] = ((1 - fx) * (1 - fy) * u[iy, ix]
                     + fx * (1 - fy) * u[iy, ix + 1]
                     + (1 - fx) * fy * u[iy + 1, ix]
                     + fx * fy * u[iy + 1, ix + 1])
    return out


@dataclass
class DiffusionResult:
    positions: NDArray
    iterations: int
    converged: bool
    uniformity: float


def run_diffusion(grid: TriGrid2D, populations: NDArray, m: int = 64,
                  dt: float | None = None, eps: float = 1e-3,
                  max_iters: int = 100_000) -> DiffusionResult:
    """Diffuse until the raster is uniform to eps, or the budget runs out."""
    state = initial_state(grid, populations, m=m, dt=dt)
    converged = False
    while state.iteration < max_iters:
        diffusion_step(state)
        u = state.uniformity()
        # an unstable raster can push the mean negative; a negative ratio
        # is divergence, not convergence
        if 0.0 <= u < eps:
            converged = True
            break
    return DiffusionResult(positions=state.positions,
                           iterations=state.iteration,
                           converged=converged,
                           uniformity=state.uniformity())

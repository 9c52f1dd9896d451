"""Differentiable training objectives for grid deformation.

Three terms, all built on the reverse-mode engine:

* density: coefficient of variation (std/mean) of per-element density
  population / signed measure.  The reciprocal switches to its tangent
  line below a tiny measure floor, so a near-degenerate element feeds
  back a large positive density instead of blowing through the 1/x pole;
  on any fold-free state the term equals plain std/mean exactly;
* slope: total variation of consecutive finite-difference slopes along
  every grid row (+x traversal) and column (+y traversal), divided by n;
* distance: same construction on squared step lengths between neighboring
  nodes, in 2D or 3D, divided by n.

Positions enter as a Var of shape (num_nodes, dim); elements and
populations are fixed arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from . import autodiff as ad
from .autodiff import Var

# Epsilon added to finite-difference denominators, as in the slope terms.
EPS = 1e-8

# The density reciprocal is linearized below this fraction of the uniform
# element measure.  Equalized measures are proportional to population, so
# any element an optimizer should ever visit sits far above the floor.
MEASURE_FLOOR_FRACTION = 1e-3


@dataclass(frozen=True)
class LossWeights:
    """Term weights (lambda_d, lambda_s, lambda_l)."""

    density: float
    slope: float
    distance: float


def signed_measures(positions: Var, elements: NDArray) -> Var:
    """Signed areas (triangles) or volumes (tetrahedra) from a position Var."""
    positions = ad.as_var(positions)
    a = positions[elements[:, 0]]
    b = positions[elements[:, 1]]
    c = positions[elements[:, 2]]
    ab, ac = b - a, c - a
    if elements.shape[1] == 3:
        return (ab[:, 0] * ac[:, 1] - ab[:, 1] * ac[:, 0]) * 0.5
    d = positions[elements[:, 3]]
    ad_ = d - a
    cx = ac[:, 1] * ad_[:, 2] - ac[:, 2] * ad_[:, 1]
    cy = ac[:, 2] * ad_[:, 0] - ac[:, 0] * ad_[:, 2]
    cz = ac[:, 0] * ad_[:, 1] - ac[:, 1] * ad_[:, 0]
    return (ab[:, 0] * cx + ab[:, 1] * cy + ab[:, 2] * cz) * (1.0 / 6.0)


def density_loss(positions: Var, elements: NDArray, populations: NDArray) -> Var:
    """std/mean of per-element density; zero iff density is uniform.

    Below `floor` the reciprocal 1/measure continues along its tangent,
    which keeps the term finite, positive, and steeply increasing as an
    element degenerates or flips.  Above the floor (every legitimate
    state) the expression reduces to populations/measures exactly.
    """
    measures = signed_measures(positions, elements)
    floor = MEASURE_FLOOR_FRACTION / len(elements)
    slack = ad.relu(floor - measures)
    # slack is zero above the floor, so safe == measures there and the
    # extra term vanishes along with its gradient.
    safe = measures + slack
    pop = ad.as_var(np.asarray(populations, dtype=np.float64))
    dens = pop / safe + pop * slack * (1.0 / floor ** 2)
    return ad.std(dens) / ad.mean(dens)


def _lattice(positions: Var, n: int, dim: int) -> Var:
    positions = ad.as_var(positions)
    expected = (n ** dim, dim)
    if positions.shape != expected:
        raise ValueError(f"positions shaped {positions.shape}, "
                         f"expected {expected} for an n={n} grid")
    # Row-major with x fastest: axes come out as (y, x) or (z, y, x).
    return positions.reshape((n,) * dim + (dim,))


def _variation(values: Var, axis: int) -> Var:
    """Sum of |v_{j+1} - v_j| along one lattice axis, over all lines."""
    ndim = len(values.shape)
    lo = tuple(slice(None, -1) if a == axis else slice(None) for a in range(ndim))
    hi = tuple(slice(1, None) if a == axis else slice(None) for a in range(ndim))
    return ad.total(ad.absolute(values[hi] - values[lo]))


def _steps(lattice: Var, axis: int) -> tuple[Var, ...]:
    ndim = len(lattice.shape)
    out = []
    for comp in range(lattice.shape[-1]):
        lo = tuple(slice(None, -1) if a == axis else slice(None)
                   for a in range(ndim - 1)) + (comp,)
        hi = tuple(slice(1, None) if a == axis else slice(None)
                   for a in range(ndim - 1)) + (comp,)
        out.append(lattice[hi] - lattice[lo])
    return tuple(out)


def slope_loss(positions: Var, n: int) -> Var:
    """Total variation of row-wise and column-wise slopes, divided by n."""
    lat = _lattice(positions, n, 2)
    dx_r, dy_r = _steps(lat, axis=1)        # along +x within each row
    rows = _variation(dy_r / (dx_r + EPS), axis=1)
    dx_c, dy_c = _steps(lat, axis=0)        # along +y within each column
    cols = _variation(dx_c / (dy_c + EPS), axis=0)
    return (rows + cols) / n


def distance_loss(positions: Var, n: int, dim: int = 2) -> Var:
    """Total variation of squared neighbor distances along each axis, / n."""
    lat = _lattice(positions, n, dim)
    acc = None
    for axis in range(dim - 1, -1, -1):
        steps = _steps(lat, axis)
        dsq = steps[0] * steps[0]
        for s in steps[1:]:
            dsq = dsq + s * s
        term = _variation(dsq, axis)
        acc = term if acc is None else acc + term
    return acc / n


def total_loss(positions: Var, elements: NDArray, populations: NDArray,
               n: int, dim: int, weights: LossWeights) -> Var:
    """Weighted sum; the slope term only exists on 2D grids."""
    loss = weights.density * density_loss(positions, elements, populations)
    if dim == 2 and weights.slope != 0.0:
        loss = loss + weights.slope * slope_loss(positions, n)
    if weights.distance != 0.0:
        loss = loss + weights.distance * distance_loss(positions, n, dim)
    return loss

"""Surface remeshing through square parameterization and density equalization.

A simply-connected open surface is flattened to the unit square by a Tutte
embedding, the flattening is deformed so that the prescribed per-face
population becomes uniform per unit parameter area, and a regular grid laid
over the deformed parameter domain is pulled back to the surface.  Regions
with higher population end up with a finer triangulation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import spsolve

from . import autodiff as ad
from .geometry import make_grid_2d, read_obj, signed_area
from .hierarchy import aggregate_population, bilinear_transfer
from .losses import density_loss, signed_measures
from .model import (COARSE_SCHEDULE_2D, Schedule, TransformModel, _train_grid,
                    default_weights_2d, finetune_phase, init_phase)


@dataclass
class SurfaceMesh:
    """Open triangulated surface with its boundary loop precomputed.

    Attributes:
        vertices: (V, 3) positions.
        faces: (F, 3) vertex indices.
        boundary: vertex indices along the single boundary loop, starting at
            the lowest-index boundary vertex and following face orientation.
    """

    vertices: NDArray = field(repr=False)
    faces: NDArray = field(repr=False)
    boundary: NDArray = field(repr=False)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]


def make_surface(vertices: NDArray, faces: NDArray) -> SurfaceMesh:
    """Validate manifoldness and detect the boundary loop."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    if faces.ndim != 2 or faces.shape[1] != 3:
        raise ValueError("faces must be (F, 3)")
    boundary = _boundary_loop(vertices, faces)
    return SurfaceMesh(vertices=vertices, faces=faces, boundary=boundary)


def load_surface(path) -> SurfaceMesh:
    return make_surface(*read_obj(path))


def _boundary_loop(vertices: NDArray, faces: NDArray) -> NDArray:
    directed = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]],
                               faces[:, [2, 0]]], axis=0)
    keys = [tuple(e) for e in directed]
    if len(set(keys)) != len(keys):
        raise ValueError("mesh is not consistently oriented")
    und: dict[tuple[int, int], int] = {}
    for a, b in keys:
        k = (a, b) if a < b else (b, a)
        und[k] = und.get(k, 0) + 1
    if any(c > 2 for c in und.values()):
        raise ValueError("mesh is not edge-manifold")

    # a boundary edge is traversed once; its reversal closes no face.
    # following the face direction keeps the square boundary consistently
    # oriented, so the embedded faces stay positive
    succ: dict[int, int] = {}
    have = set(keys)
    for a, b in keys:
        if (b, a) not in have:
            if a in succ:
                raise ValueError("mesh is not edge-manifold")
            succ[a] = b
    if not succ:
        raise ValueError("mesh has no boundary (closed surface)")

    start = min(succ)
    loop = [start]
    cur = succ[start]
    while cur != start:
        loop.append(cur)
        cur = succ[cur]
    if len(loop) != len(succ):
        raise ValueError("mesh has more than one boundary loop")

    used = np.unique(faces)
    euler = len(used) - len(und) + len(faces)
    if euler != 1:
        raise ValueError("mesh is not a topological disk")
    return np.asarray(loop, dtype=np.int64)


# -- Tutte embedding ----------------------------------------------------------

def _square_boundary_positions(mesh: SurfaceMesh) -> tuple[NDArray, NDArray]:
    """Boundary vertex positions on the unit-square outline.

    Returns (boundary indices, (B, 2) positions).  The four vertices nearest
    the quarter arc-length marks become the square corners; the rest are
    spread along each side by arc-length proportion.
    """
    loop = mesh.boundary
    pts = mesh.vertices[loop]
    seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    total = float(seg.sum())
    if total == 0.0:
        raise ValueError("boundary loop has zero length")
    cum = np.concatenate([[0.0], np.cumsum(seg[:-1])])

    b = len(loop)
    corners: list[int] = []
    if b < 4:
        corners = list(range(b))
    else:
        taken = np.zeros(b, dtype=bool)
        for k in range(4):
            mark = total * k / 4.0
            d = np.abs(cum - mark)
            d = np.minimum(d, total - d)  # cyclic distance
            d[taken] = np.inf
            pick = int(np.argmin(d))
            taken[pick] = True
            corners.append(pick)
        corners.sort()

    square = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    out = np.empty((b, 2))
    n_corners = len(corners)
    for side in range(n_corners):
        i0 = corners[side]
        i1 = corners[(side + 1) % n_corners]
        p0 = square[side % 4]
        p1 = square[(side + 1) % 4]
        s0 = cum[i0]
        length = (cum[i1] - s0) % total if i1 != i0 else 0.0
        if i1 >= i0 and side + 1 < n_corners or n_corners == 1:
            members = list(range(i0, i1 if i1 > i0 else b))
        else:
            members = list(range(i0, b)) + list(range(0, i1))
        if not members:
            members = [i0]
        for j in members:
            t = ((cum[j] - s0) % total) / length if length > 0.0 else 0.0
            out[j] = p0 + t * (p1 - p0)
    return loop, out


def tutte_embed(mesh: SurfaceMesh) -> NDArray:
    """Planar positions in [0,1]^2: boundary on the square outline, each
    interior vertex the average of its neighbors.  Fold-over-free for valid
    input by convexity of the boundary."""
    loop, boundary_pos = _square_boundary_positions(mesh)
    v = mesh.num_vertices
    planar = np.zeros((v, 2))
    planar[loop] = boundary_pos

    on_boundary = np.zeros(v, dtype=bool)
    on_boundary[loop] = True
    interior = np.where(~on_boundary)[0]
    used = np.zeros(v, dtype=bool)
    used[np.unique(mesh.faces)] = True
    interior = interior[used[interior]]

    if len(interior) > 0:
        edges = np.concatenate([mesh.faces[:, [0, 1]], mesh.faces[:, [1, 2]],
                                mesh.faces[:, [2, 0]]], axis=0)
        both = np.unique(np.sort(edges, axis=1), axis=0)
        adj = np.concatenate([both, both[:, ::-1]], axis=0)

        index_of = -np.ones(v, dtype=np.int64)
        index_of[interior] = np.arange(len(interior))

        rows, cols, vals = [], [], []
        rhs = np.zeros((len(interior), 2))
        degree = np.zeros(v)
        np.add.at(degree, adj[:, 0], 1.0)
        for a, bb in adj:
            if index_of[a] < 0:
                continue
            ia = index_of[a]
            if index_of[bb] >= 0:
                rows.append(ia)
                cols.append(index_of[bb])
                vals.append(-1.0)
            else:
                rhs[ia] += planar[bb]
        rows.extend(range(len(interior)))
        cols.extend(range(len(interior)))
        vals.extend(degree[interior])

        lap = csr_matrix((vals, (rows, cols)),
                         shape=(len(interior), len(interior)))
        sol = spsolve(lap.tocsc(), rhs)
        if not np.all(np.isfinite(sol)):
            raise ValueError("Tutte system is singular")
        planar[interior] = sol.reshape(len(interior), 2)

    areas = signed_area(planar[mesh.faces[:, 0]], planar[mesh.faces[:, 1]],
                        planar[mesh.faces[:, 2]])
    if np.any(areas <= 0.0):
        raise ValueError("Tutte embedding produced flipped faces")
    return planar


# -- point location -----------------------------------------------------------

def barycentric(a: NDArray, b: NDArray, c: NDArray, p: NDArray) -> NDArray:
    """Barycentric weights of p in triangle (a, b, c); rows broadcast."""
    area = signed_area(a, b, c)
    wa = signed_area(p, b, c) / area
    wb = signed_area(a, p, c) / area
    wc = signed_area(a, b, p) / area
    return np.stack([wa, wb, wc], axis=-1)


def _face_neighbors(faces: NDArray) -> NDArray:
    """neighbors[f, k] = face across the edge opposite corner k, or -1."""
    nf = len(faces)
    neighbors = -np.ones((nf, 3), dtype=np.int64)
    owner: dict[tuple[int, int], tuple[int, int]] = {}
    for f in range(nf):
        tri = faces[f]
        for k in range(3):
            a, b = tri[(k + 1) % 3], tri[(k + 2) % 3]
            key = (a, b) if a < b else (b, a)
            if key in owner:
                g, j = owner[key]
                neighbors[f, k] = g
                neighbors[g, j] = f
            else:
                owner[key] = (f, k)
    return neighbors


class _Buckets:
    """Regular-grid seed index: one face id per covered bucket."""

    def __init__(self, positions: NDArray, faces: NDArray, grid: int):
        self.grid = grid
        self.lo = positions.min(axis=0)
        span = positions.max(axis=0) - self.lo
        self.span = np.where(span > 0, span, 1.0)
        cent = positions[faces].mean(axis=1)
        cells = self._cell(cent)
        self.seed = -np.ones(grid * grid, dtype=np.int64)
        self.seed[cells] = np.arange(len(faces))
        filled = np.where(self.seed >= 0)[0]
        if len(filled) == 0:
            self.seed[:] = 0
        else:
            # nearest filled bucket for the empty ones, in index space
            fy, fx = divmod(filled, grid)
            ey, ex = divmod(np.where(self.seed < 0)[0], grid)
            d = (ex[:, None] - fx[None, :]) ** 2 + (ey[:, None] - fy[None, :]) ** 2
            self.seed[self.seed < 0] = self.seed[filled[np.argmin(d, axis=1)]]

    def _cell(self, pts: NDArray) -> NDArray:
        ij = ((pts - self.lo) / self.span * self.grid).astype(np.int64)
        ij = np.clip(ij, 0, self.grid - 1)
        return ij[:, 1] * self.grid + ij[:, 0]

    def __call__(self, pts: NDArray) -> NDArray:
        return self.seed[self._cell(pts)]


def _locate_brute(positions: NDArray, faces: NDArray, p: NDArray,
                  tol: float) -> int:
    w = barycentric(positions[faces[:, 0]], positions[faces[:, 1]],
                    positions[faces[:, 2]], p)
    best = int(np.argmax(w.min(axis=1)))
    return best if w[best].min() >= -tol else -1


def _project_to_boundary(positions: NDArray, faces: NDArray,
                         neighbors: NDArray, p: NDArray) -> tuple[int, NDArray]:
    fs, ks = np.where(neighbors < 0)
    a = positions[faces[fs, (ks + 1) % 3]]
    b = positions[faces[fs, (ks + 2) % 3]]
    ab = b - a
    t = np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab)
    t = np.clip(t, 0.0, 1.0)
    foot = a + t[:, None] * ab
    best = int(np.argmin(np.einsum("ij,ij->i", p - foot, p - foot)))
    f, k = int(fs[best]), int(ks[best])
    w = np.zeros(3)
    w[(k + 1) % 3] = 1.0 - t[best]
    w[(k + 2) % 3] = t[best]
    return f, w


def inverse_map(positions: NDArray, faces: NDArray,
                queries: NDArray, tol: float = 1e-12) -> tuple[NDArray, NDArray]:
    """Locate each query in the triangulation: (face ids, barycentric weights).

    Triangle walk from a grid-bucket seed, with an exhaustive fallback when
    the walk leaves the mesh (non-convex pockets).  Queries outside the domain
    are projected onto the nearest boundary edge; one warning reports how
    many.
    """
    positions = np.asarray(positions, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    neighbors = _face_neighbors(faces)
    buckets = _Buckets(positions, faces, max(2, int(np.sqrt(len(faces)) / 2)))

    ids = np.empty(len(queries), dtype=np.int64)
    weights = np.empty((len(queries), 3))
    outside = 0
    seeds = buckets(queries)
    cap = len(faces)
    for qi, p in enumerate(queries):
        f = int(seeds[qi])
        located = -1
        for _ in range(cap):
            tri = faces[f]
            w = barycentric(positions[tri[0]], positions[tri[1]],
                            positions[tri[2]], p)
            k = int(np.argmin(w))
            if w[k] >= -tol:
                located = f
                break
            nxt = neighbors[f, k]
            if nxt < 0:
                break
            f = int(nxt)
        if located < 0:
            located = _locate_brute(positions, faces, p, tol)
        if located < 0:
            outside += 1
            ids[qi], weights[qi] = _project_to_boundary(
                positions, faces, neighbors, p)
            continue
        tri = faces[located]
        w = barycentric(positions[tri[0]], positions[tri[1]],
                        positions[tri[2]], p)
        ids[qi] = located
        weights[qi] = np.clip(w, 0.0, None) / np.clip(w, 0.0, None).sum()
    if outside:
        warnings.warn(f"{outside} of {len(queries)} queries fell outside the "
                      "triangulation and were projected onto its boundary",
                      RuntimeWarning, stacklevel=2)
    return ids, weights


# -- density-equalizing parameter deformation ---------------------------------

# Polish stage over the mesh's own faces.  The bulk of the deformation comes
# from a coarse grid warm start, so small fixed-rate steps suffice here; at
# this rate no face can cross through zero area in one move.
REMESH_SCHEDULE = Schedule(train_lr=2e-4, max_epochs=1000, patience=None)

# Warm-start grid resolution: enough cells to resolve regional population
# contrast, few enough that its own training stays cheap.
WARM_START_RESOLUTION = 16

# Weight of the barrier that keeps parameter faces from collapsing through
# zero area during the polish.  Inactive once every face sits above its
# margin, so it does not bias the converged density.
FOLD_GUARD = 100.0


def edge_variation(positions, faces: NDArray):
    """Mean over faces of the pairwise spread of squared edge lengths,
    normalized by each face's own mean squared edge length.

    Unlike a global spread penalty this tolerates gradual size changes
    across the mesh, which is exactly what a non-uniform population asks
    for; it only resists local disparity (skinny or folded triangles).
    """
    positions = ad.as_var(positions)
    a = positions[faces[:, 0]]
    b = positions[faces[:, 1]]
    c = positions[faces[:, 2]]

    def sq(d):
        total = d[:, 0] * d[:, 0]
        for k in range(1, d.shape[1]):
            total = total + d[:, k] * d[:, k]
        return total

    l0, l1, l2 = sq(b - a), sq(c - b), sq(a - c)
    tv = (ad.absolute(l0 - l1) + ad.absolute(l1 - l2) + ad.absolute(l2 - l0))
    return ad.mean(tv / ((l0 + l1 + l2) / 3.0))


def equalize_parameter_mesh(planar: NDArray, faces: NDArray,
                            populations: NDArray, seed: int = 0,
                            schedule: Schedule = REMESH_SCHEDULE,
                            regularization: float = 0.1) -> NDArray:
    """Deform planar positions so face density (population/area) evens out.

    Training a fresh network on the raw face populations stalls or folds:
    the required deformation is large, and at a step size that can cover it
    a small face jumps straight through zero area, after which the signed
    feedback reads the fold as a harmless near-zero density and never undoes
    it.  So the bulk of the motion is delegated to the coarse-grid machinery
    on a smoothed version of the problem, the mesh is warped through that
    grid deformation, and only a gentle polish runs on the mesh's own faces:
    density plus an edge-variation term that keeps triangles locally
    well-shaped, plus a barrier against area collapse.  Boundary vertices
    slide along their square edge but never leave it, so the deformed mesh
    still covers the unit square exactly.
    """
    populations = np.asarray(populations, dtype=np.float64)
    if populations.shape != (len(faces),):
        raise ValueError(f"expected {len(faces)} populations, "
                         f"got {populations.shape}")
    if np.any(populations <= 0.0):
        raise ValueError("populations must be positive")
    rng = np.random.default_rng(seed)

    warm = make_grid_2d(WARM_START_RESOLUTION)
    centroids = planar[faces].mean(axis=1)
    warm_pop = aggregate_population(warm.centroids(), centroids, populations,
                                    radius=1.0 / WARM_START_RESOLUTION)
    _, _, _, warm_pos = _train_grid(
        warm, warm_pop, warm.faces, 2,
        default_weights_2d(WARM_START_RESOLUTION), COARSE_SCHEDULE_2D,
        rng, init_target=warm.vertices)
    # The grid trains with a free boundary and shrinks a little; stretching
    # its bounding box back to the unit square keeps the warp defined on the
    # whole square and shortens the snap back onto the boundary below.
    lo = warm_pos.min(axis=0)
    span = warm_pos.max(axis=0) - lo
    if np.any(span <= 0.0):
        raise ValueError("warm-start deformation collapsed an axis")
    target = bilinear_transfer((warm_pos - lo) / span, planar)

    net = TransformModel.initialize(len(faces), 2 * len(planar), rng)
    init_phase(net, populations, target.ravel(),
               schedule.init_lr, schedule.init_epochs)

    # The deformed boundary must stay on the unit square: a vertex sitting on
    # a square edge keeps that edge's coordinate and only slides along it,
    # and corners stay put.  The deformed domain then covers the whole
    # square, so later resampling queries never leave it.
    pinned = (np.abs(planar) < 1e-9) | (np.abs(planar - 1.0) < 1e-9)
    slide = np.where(pinned, 0.0, 1.0)
    anchor = np.where(pinned, planar, 0.0)

    # Equalized face areas are proportional to population; a quarter of that
    # is the floor below which the barrier kicks in.
    total = float(signed_area(planar[faces[:, 0]], planar[faces[:, 1]],
                              planar[faces[:, 2]]).sum())
    margin = 0.25 * total * populations / populations.sum()

    def loss_fn(positions):
        positions = positions * slide + anchor
        loss = density_loss(positions, faces, populations)
        if regularization != 0.0:
            loss = loss + regularization * edge_variation(positions, faces)
        shortfall = ad.relu(signed_measures(positions, faces)
                            * (-1.0 / margin) + 1.0)
        return loss + FOLD_GUARD * ad.mean(shortfall)

    finetune_phase(net, populations, loss_fn, schedule, dim=2)
    deformed = net.forward(populations).reshape(len(planar), 2)
    return deformed * slide + anchor


def pull_back_grid(mesh: SurfaceMesh, deformed: NDArray,
                   m: int) -> SurfaceMesh:
    """Sample a regular m x m grid through the deformed parameterization.

    Each grid vertex is located in the deformed planar mesh and mapped onto
    the surface with the barycentric weights of the containing face.
    """
    areas = signed_area(deformed[mesh.faces[:, 0]], deformed[mesh.faces[:, 1]],
                        deformed[mesh.faces[:, 2]])
    if np.any(areas <= 0.0):
        raise ValueError("parameter deformation produced flipped faces")

    grid = make_grid_2d(m)
    ids, w = inverse_map(deformed, mesh.faces, grid.vertices)
    corners = mesh.vertices[mesh.faces[ids]]
    verts3d = np.einsum("qk,qkj->qj", w, corners)
    return make_surface(verts3d, grid.faces)


def remesh_surface(mesh: SurfaceMesh, populations: NDArray, m: int,
                   seed: int = 0,
                   schedule: Schedule = REMESH_SCHEDULE) -> SurfaceMesh:
    """Resample the surface as a regular m x m grid pulled back through the
    density-equalized parameterization.  Faces with more population end up
    covering more parameter area, so the output triangles there are smaller
    on the surface."""
    planar = tutte_embed(mesh)
    deformed = equalize_parameter_mesh(planar, mesh.faces, populations,
                                       seed=seed, schedule=schedule)
    return pull_back_grid(mesh, deformed, m)


# -- demo surfaces ------------------------------------------------------------

def make_hemisphere(rings: int = 12, sectors: int = 24) -> SurfaceMesh:
    """Orthographic dome over the unit disk: z = sqrt(1 - x^2 - y^2)."""
    if rings < 1 or sectors < 3:
        raise ValueError("need rings >= 1 and sectors >= 3")
    verts = [np.array([0.0, 0.0, 1.0])]
    for r in range(1, rings + 1):
        rad = r / rings
        for s in range(sectors):
            ang = 2.0 * np.pi * s / sectors
            x, y = rad * np.cos(ang), rad * np.sin(ang)
            verts.append(np.array([x, y, np.sqrt(max(0.0, 1.0 - x * x - y * y))]))
    faces = []
    for s in range(sectors):
        faces.append([0, 1 + s, 1 + (s + 1) % sectors])
    for r in range(1, rings):
        base0 = 1 + (r - 1) * sectors
        base1 = 1 + r * sectors
        for s in range(sectors):
            s1 = (s + 1) % sectors
            faces.append([base0 + s, base1 + s, base1 + s1])
            faces.append([base0 + s, base1 + s1, base0 + s1])
    return make_surface(np.asarray(verts), np.asarray(faces))


def make_bump_surface(n: int = 21, height: float = 0.8,
                      spread: float = 0.015) -> SurfaceMesh:
    """Square sheet with a central bump, for locality-controlled remeshing."""
    grid = make_grid_2d(n)
    xy = grid.vertices
    r2 = ((xy - 0.5) ** 2).sum(axis=1)
    z = height * np.exp(-r2 / (2.0 * spread))
    verts = np.column_stack([xy, z])
    return make_surface(verts, grid.faces)

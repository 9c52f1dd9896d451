"""Structured simplicial grids on the unit square and unit cube.

The 2D grid triangulates an n x n lattice of nodes into 2(n-1)^2 counter-
clockwise triangles; the 3D grid splits each lattice cube into 6 positively
oriented tetrahedra sharing the main diagonal.  Vertex indexing is row-major
with x fastest, then y, then z.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray


def signed_area(a: NDArray, b: NDArray, c: NDArray) -> NDArray:
    """Signed area of triangle(s) (a, b, c), positive for CCW orientation.

    Accepts single points of shape (2,) or stacks of shape (m, 2).
    """
    ab = b - a
    ac = c - a
    return 0.5 * (ab[..., 0] * ac[..., 1] - ab[..., 1] * ac[..., 0])


def signed_volume(a: NDArray, b: NDArray, c: NDArray, d: NDArray) -> NDArray:
    """Signed volume of tetrahedron(s) (a, b, c, d) via the triple product."""
    ab = b - a
    ac = c - a
    ad = d - a
    cross = np.cross(ac, ad)
    return np.einsum("...i,...i->...", ab, cross) / 6.0


@dataclass
class TriGrid2D:
    """Triangulated regular grid over the unit square.

    Attributes:
        n: nodes per side.
        vertices: (n*n, 2) node positions, row-major with x fastest.
        faces: (2*(n-1)^2, 3) vertex indices, counter-clockwise.
    """

    n: int
    vertices: NDArray = field(repr=False)
    faces: NDArray = field(repr=False)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    def face_corners(self, positions: NDArray | None = None):
        """Corner position arrays (a, b, c) per face, each (num_faces, 2)."""
        pos = self.vertices if positions is None else positions
        return pos[self.faces[:, 0]], pos[self.faces[:, 1]], pos[self.faces[:, 2]]

    def areas(self, positions: NDArray | None = None) -> NDArray:
        """Signed face areas for the given (or reference) node positions."""
        a, b, c = self.face_corners(positions)
        return signed_area(a, b, c)

    def centroids(self, positions: NDArray | None = None) -> NDArray:
        a, b, c = self.face_corners(positions)
        return (a + b + c) / 3.0


@dataclass
class TetGrid3D:
    """Tetrahedralized regular grid over the unit cube.

    Attributes:
        n: nodes per side.
        vertices: (n^3, 3) node positions, x fastest, then y, then z.
        cells: (6*(n-1)^3, 4) vertex indices, positive signed volume.
    """

    n: int
    vertices: NDArray = field(repr=False)
    cells: NDArray = field(repr=False)

    @property
    def num_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def num_cells(self) -> int:
        return self.cells.shape[0]

    def cell_corners(self, positions: NDArray | None = None):
        pos = self.vertices if positions is None else positions
        return (pos[self.cells[:, 0]], pos[self.cells[:, 1]],
                pos[self.cells[:, 2]], pos[self.cells[:, 3]])

    def volumes(self, positions: NDArray | None = None) -> NDArray:
        """Signed cell volumes for the given (or reference) node positions."""
        a, b, c, d = self.cell_corners(positions)
        return signed_volume(a, b, c, d)

    def centroids(self, positions: NDArray | None = None) -> NDArray:
        a, b, c, d = self.cell_corners(positions)
        return (a + b + c + d) / 4.0

    def boundary_faces(self) -> NDArray:
        """Outward-oriented boundary triangles (faces used by exactly one cell)."""
        return _tet_boundary_faces(self.cells)


def make_grid_2d(n: int) -> TriGrid2D:
    """Build the n x n triangulated unit-square grid.

    Each lattice cell with lower-left node k is split into [k, k+1, k+n] and
    [k+1, k+n+1, k+n].  Areas are uniformly 0.5/(n-1)^2 and sum to 1.
    """
    if n < 2:
        raise ValueError(f"grid needs n >= 2 nodes per side, got {n}")
    # i/(n-1) rounds exactly for dyadic spacings, keeping such grids bit-uniform.
    ticks = np.arange(n) / (n - 1)
    xs, ys = np.meshgrid(ticks, ticks, indexing="xy")
    vertices = np.column_stack([xs.ravel(), ys.ravel()])

    i, j = np.meshgrid(np.arange(n - 1), np.arange(n - 1), indexing="xy")
    k = (j * n + i).ravel()
    lower = np.column_stack([k, k + 1, k + n])
    upper = np.column_stack([k + 1, k + n + 1, k + n])
    faces = np.empty((2 * (n - 1) ** 2, 3), dtype=np.int64)
    faces[0::2] = lower
    faces[1::2] = upper
    return TriGrid2D(n=n, vertices=vertices, faces=faces)


# The six tetrahedra of the Kuhn subdivision walk the cube's main diagonal,
# one per permutation of the axis order; identical in every cell so shared
# faces between neighboring cells coincide.
_KUHN_PERMUTATIONS = (
    (0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0),
)


def make_grid_3d(n: int) -> TetGrid3D:
    """Build the n x n x n tetrahedralized unit-cube grid (6 tets per cube)."""
    if n < 2:
        raise ValueError(f"grid needs n >= 2 nodes per side, got {n}")
    ticks = np.arange(n) / (n - 1)
    zs, ys, xs = np.meshgrid(ticks, ticks, ticks, indexing="ij")
    vertices = np.column_stack([xs.ravel(), ys.ravel(), zs.ravel()])

    def node(ix, iy, iz):
        return (iz * n + iy) * n + ix

    # Corner offsets of each tet within the unit cube, one row of 4 per tet.
    patterns = []
    for perm in _KUHN_PERMUTATIONS:
        steps = np.zeros((4, 3), dtype=np.int64)
        for stop, axis in enumerate(perm, start=1):
            steps[stop:] += np.eye(3, dtype=np.int64)[axis]
        corners = [tuple(row) for row in steps]
        # Orient positively: odd axis permutations flip the sign.
        pts = steps.astype(float)
        if signed_volume(pts[0], pts[1], pts[2], pts[3]) < 0:
            corners[2], corners[3] = corners[3], corners[2]
        patterns.append(corners)

    m = n - 1
    ix, iy, iz = np.meshgrid(np.arange(m), np.arange(m), np.arange(m), indexing="ij")
    ix, iy, iz = ix.ravel(), iy.ravel(), iz.ravel()
    cells = np.empty((6 * m**3, 4), dtype=np.int64)
    for t, corners in enumerate(patterns):
        for c, (dx, dy, dz) in enumerate(corners):
            cells[t::6, c] = node(ix + dx, iy + dy, iz + dz)
    return TetGrid3D(n=n, vertices=vertices, cells=cells)


# Faces of tet (a, b, c, d), oriented outward when the tet volume is positive.
_TET_FACES = ((0, 2, 1), (0, 1, 3), (0, 3, 2), (1, 2, 3))


def _tet_boundary_faces(cells: NDArray) -> NDArray:
    faces = np.concatenate([cells[:, list(f)] for f in _TET_FACES], axis=0)
    keys = np.sort(faces, axis=1)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    return faces[counts[inverse] == 1]


# -- Wavefront OBJ ------------------------------------------------------------

def write_obj(path, vertices: NDArray, faces: NDArray) -> None:
    """Write v/f records with 1-based indices; 2D vertices get z = 0."""
    verts = np.asarray(vertices, dtype=np.float64)
    if verts.ndim != 2 or verts.shape[1] not in (2, 3):
        raise ValueError("vertices must be (N, 2) or (N, 3)")
    if verts.shape[1] == 2:
        verts = np.column_stack([verts, np.zeros(len(verts))])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for x, y, z in verts:
            fh.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for tri in np.asarray(faces):
            fh.write("f " + " ".join(str(int(i) + 1) for i in tri) + "\n")


def read_obj(path) -> tuple[NDArray, NDArray]:
    """Read v/f records of a triangulated OBJ; other record types are skipped."""
    verts: list[list[float]] = []
    faces: list[list[int]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            parts = raw.split()
            if not parts or parts[0] not in ("v", "f"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise ValueError(f"line {lineno}: vertex needs 3 coordinates")
                verts.append([float(t) for t in parts[1:4]])
            else:
                if len(parts) != 4:
                    raise ValueError(f"line {lineno}: only triangular faces supported")
                # each corner may be v, v/vt, v/vt/vn, or v//vn
                idx = [int(t.split("/")[0]) for t in parts[1:]]
                if any(i <= 0 for i in idx):
                    raise ValueError(f"line {lineno}: indices must be positive")
                faces.append([i - 1 for i in idx])
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if f.size and f.max() >= len(v):
        raise ValueError("face index past the last vertex")
    return v, f


def write_volume(obj_path, elements_path, vertices: NDArray, cells: NDArray) -> None:
    """Boundary-surface OBJ (all vertices kept, so indices stay valid) plus a
    plain-text element file with one 1-based 4-tuple per line."""
    write_obj(obj_path, vertices, _tet_boundary_faces(np.asarray(cells)))
    with open(elements_path, "w", encoding="utf-8", newline="\n") as fh:
        for cell in np.asarray(cells):
            fh.write(" ".join(str(int(i) + 1) for i in cell) + "\n")

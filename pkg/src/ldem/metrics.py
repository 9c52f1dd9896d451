"""Map-quality metrics: Beltrami coefficients, density equalization, histograms.

The Beltrami coefficient of each face comes from the linear map between the
reference and deformed triangles.  With J = E' adj(E)/det(E) assembled
entrywise, an identical triangle pair yields exactly mu = 0, so the
identity map reports a strict zero.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from .geometry import TetGrid3D, TriGrid2D, signed_area

# A face whose f_z magnitude falls below this is treated as degenerate and
# reports an infinite distortion.
DEGENERATE_FZ = 1e-14


def beltrami_coefficients(ref_positions: NDArray, def_positions: NDArray,
                          faces: NDArray) -> NDArray:
    """Complex Beltrami coefficient per face of a planar map."""
    ra, rb, rc = (ref_positions[faces[:, k]] for k in range(3))
    da, db, dc = (def_positions[faces[:, k]] for k in range(3))

    # Reference edge matrix E = [b-a | c-a], deformed E'.
    p, r = (rb - ra)[:, 0], (rb - ra)[:, 1]
    q, s = (rc - ra)[:, 0], (rc - ra)[:, 1]
    det = p * s - q * r

    e00, e10 = (db - da)[:, 0], (db - da)[:, 1]
    e01, e11 = (dc - da)[:, 0], (dc - da)[:, 1]

    ux = (e00 * s + e01 * (-r)) / det
    uy = (e00 * (-q) + e01 * p) / det
    vx = (e10 * s + e11 * (-r)) / det
    vy = (e10 * (-q) + e11 * p) / det

    fz = 0.5 * ((ux + vy) + 1j * (vx - uy))
    fzbar = 0.5 * ((ux - vy) + 1j * (vx + uy))

    out = np.empty(faces.shape[0], dtype=np.complex128)
    degenerate = np.abs(fz) < DEGENERATE_FZ
    ok = ~degenerate
    out[ok] = fzbar[ok] / fz[ok]
    out[degenerate] = np.inf
    return out


def de_error(populations: NDArray, measures: NDArray) -> float:
    """std/mean of per-element density; the same arithmetic as the loss."""
    dens = np.asarray(populations, dtype=np.float64) / np.asarray(measures, dtype=np.float64)
    return float(dens.std() / dens.mean())


def count_foldovers(measures: NDArray) -> int:
    """Number of elements with non-positive signed measure."""
    return int(np.count_nonzero(np.asarray(measures) <= 0.0))


def density_histograms(populations: NDArray, initial_measures: NDArray,
                       final_measures: NDArray, bins: int = 50):
    """Histograms of density/mean(density) before and after, shared edges.

    Returns (edges, initial_counts, final_counts); counts are integers that
    sum to the element count.  The axis spans [0, max(2, observed max)].
    """
    rho0 = populations / initial_measures
    rho1 = populations / final_measures
    norm0 = rho0 / rho0.mean()
    norm1 = rho1 / rho1.mean()
    top = max(2.0, float(norm0.max()), float(norm1.max()))
    edges = np.linspace(0.0, top, bins + 1)
    c0, _ = np.histogram(norm0, bins=edges)
    c1, _ = np.histogram(norm1, bins=edges)
    return edges, c0, c1


@dataclass
class QualityReport:
    """Per-map metric bundle serialized by the CLI."""

    dim: int
    de_error: float
    foldovers: int
    densities: NDArray
    hist_edges: NDArray
    hist_initial: NDArray
    hist_final: NDArray
    mu_abs: NDArray | None = None
    bc_mean: float | None = None
    bc_max: float | None = None

    @property
    def bijective(self) -> bool:
        if self.foldovers > 0:
            return False
        if self.dim == 2:
            return bool(self.bc_max is not None and self.bc_max < 1.0)
        return True


def quality_report(grid: TriGrid2D | TetGrid3D, positions: NDArray,
                   populations: NDArray, bins: int = 50) -> QualityReport:
    """Metrics of the map taking the reference grid to `positions`."""
    if isinstance(grid, TriGrid2D):
        initial = grid.areas()
        final = grid.areas(positions)
        mu = beltrami_coefficients(grid.vertices, positions, grid.faces)
        mu_abs = np.abs(mu)
        bc_mean = float(mu_abs.mean())
        bc_max = float(mu_abs.max())
        dim = 2
    else:
        initial = grid.volumes()
        final = grid.volumes(positions)
        mu_abs, bc_mean, bc_max = None, None, None
        dim = 3

    edges, c0, c1 = density_histograms(populations, initial, final, bins)
    return QualityReport(
        dim=dim,
        de_error=de_error(populations, final),
        foldovers=count_foldovers(final),
        densities=populations / final,
        hist_edges=edges, hist_initial=c0, hist_final=c1,
        mu_abs=mu_abs, bc_mean=bc_mean, bc_max=bc_max)


def planar_report(ref_positions: NDArray, def_positions: NDArray,
                  faces: NDArray, populations: NDArray,
                  bins: int = 50) -> QualityReport:
    """Metrics of the planar map sending ref_positions to def_positions.

    Like quality_report, but for an arbitrary shared triangulation instead
    of a reference grid; only x and y participate.
    """
    ref = np.asarray(ref_positions, dtype=np.float64)[:, :2]
    cur = np.asarray(def_positions, dtype=np.float64)[:, :2]
    faces = np.asarray(faces, dtype=np.int64)
    initial = signed_area(ref[faces[:, 0]], ref[faces[:, 1]], ref[faces[:, 2]])
    final = signed_area(cur[faces[:, 0]], cur[faces[:, 1]], cur[faces[:, 2]])
    mu_abs = np.abs(beltrami_coefficients(ref, cur, faces))

    edges, c0, c1 = density_histograms(populations, initial, final, bins)
    return QualityReport(
        dim=2,
        de_error=de_error(populations, final),
        foldovers=count_foldovers(final),
        densities=populations / final,
        hist_edges=edges, hist_initial=c0, hist_final=c1,
        mu_abs=mu_abs, bc_mean=float(mu_abs.mean()), bc_max=float(mu_abs.max()))


# -- serialization -----------------------------------------------------------

def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".12g")


def write_face_csv(report: QualityReport, path) -> None:
    """One row per element: id, |mu| (blank in 3D), final density."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["face", "mu_abs", "density"])
        for i, dens in enumerate(report.densities):
            mu = _fmt(report.mu_abs[i]) if report.mu_abs is not None else ""
            writer.writerow([i, mu, _fmt(dens)])


SUMMARY_COLUMNS = ["case", "method", "bc_mean", "bc_max", "de_error",
                   "foldovers", "runtime_s"]


def summary_row(case: str, method: str, report: QualityReport,
                runtime_s: float) -> dict:
    """runtime_s lands in the CSV rounded to whole seconds, keeping reruns
    of a deterministic config byte-identical."""
    return {
        "case": case,
        "method": method,
        "bc_mean": _fmt(report.bc_mean),
        "bc_max": _fmt(report.bc_max),
        "de_error": _fmt(report.de_error),
        "foldovers": str(report.foldovers),
        "runtime_s": str(int(round(runtime_s))),
    }


def write_summary_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)

"""Command-line interface: validated run configs in, artifact files out.

Every subcommand reads an optional JSON config (a file path or the name of a
packaged preset), overlays the command-line flags, validates the merged
mapping against the published schema before any computation starts, and
writes its artifact set into the output directory.  Reruns with the same
seed and config produce byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.tri import Triangulation
from numpy.typing import NDArray

from .baseline import large_step, run_diffusion
from .fields import evaluate, generator_names
from .geometry import make_grid_2d, read_obj, write_obj, write_volume
from .losses import LossWeights
from .metrics import (QualityReport, planar_report, quality_report,
                      summary_row, write_face_csv, write_summary_csv)
from .model import (COARSE_SCHEDULE_2D, COARSE_SCHEDULE_3D, DENSE_SCHEDULE_2D,
                    WEIGHTS_3D, Schedule, default_weights_2d, run_pipeline_2d,
                    run_pipeline_3d)
from .remesh import (REMESH_SCHEDULE, equalize_parameter_mesh, load_surface,
                     make_bump_surface, make_hemisphere, pull_back_grid,
                     tutte_embed)

MODES = ("map2d", "map3d", "baseline", "compare", "remesh", "metrics")

# The six standard 2D comparison cases, in report order.
COMPARE_CASES = ("basic_sinusoidal", "complex_sinusoidal", "ring",
                 "localized_peaks", "blended_quadrants", "cu_pattern")

NAMED_SURFACES = {"hemisphere": make_hemisphere, "bump": make_bump_surface}

_PACKAGE_DIR = Path(__file__).parent
SCHEMA_PATH = _PACKAGE_DIR / "schema.json"
PRESET_DIR = _PACKAGE_DIR / "presets"

# SVG element ids derive from this salt instead of the process-random
# default, keeping rerendered figures byte-identical.
matplotlib.rcParams["svg.hashsalt"] = "ldem"


class ConfigError(Exception):
    """Configuration problem; the CLI reports it and exits with status 2."""


# -- configuration -----------------------------------------------------------

def preset_names() -> list[str]:
    return sorted(p.stem for p in PRESET_DIR.glob("*.json"))


def load_config(ref: str) -> dict:
    """Read a config mapping from a file path or a packaged preset name."""
    path = Path(ref)
    if not path.is_file():
        packaged = PRESET_DIR / f"{ref}.json"
        if not packaged.is_file():
            raise ConfigError(f"no config file or preset named {ref!r}; "
                              f"presets: {', '.join(preset_names())}")
        path = packaged
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})")
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return raw


def validate_config(raw: dict) -> None:
    """Schema-check the merged mapping; messages carry a JSON pointer."""
    schema = json.loads(SCHEMA_PATH.read_text())
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(raw),
                    key=lambda e: list(e.absolute_path))
    if errors:
        first = errors[0]
        pointer = "/" + "/".join(str(part) for part in first.absolute_path)
        raise ConfigError(f"config value at {pointer}: {first.message}")


@dataclass
class RunConfig:
    """Validated run settings with defaults filled in."""

    mode: str
    case: str | None = None
    generator: str | None = None
    generator_params: dict = field(default_factory=dict)
    generators: list[str] | None = None
    d_coarse: int = 16
    d_dense: int = 51
    seed: int = 0
    out: Path = Path("artifacts")
    weights: dict = field(default_factory=dict)
    schedules: dict = field(default_factory=dict)
    baseline: dict = field(default_factory=dict)
    remesh: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    @classmethod
    def from_mapping(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        data = {k: v for k, v in raw.items() if k in known}
        data["out"] = Path(raw.get("out", "artifacts"))
        return cls(**data)

    @property
    def label(self) -> str:
        return self.case or self.generator or self.mode


def _merge_schedule(base: Schedule, override: dict | None) -> Schedule:
    return dataclasses.replace(base, **override) if override else base


def _merge_weights(base: LossWeights, override: dict) -> LossWeights:
    return dataclasses.replace(base, **override) if override else base


def _check_generator(name: str, dim: int) -> None:
    choices = generator_names(dim)
    if name not in choices:
        raise ConfigError(f"unknown {dim}D generator {name!r}; "
                          f"choices: {', '.join(choices)}")


def _resolve_dt(raw, m: int) -> float | None:
    if raw is None or raw == "default":
        return None
    if raw == "large":
        return large_step(m)
    return float(raw)


def _read_population_csv(path: str, count: int) -> NDArray:
    """Two-column 'element,value' table; a header row is allowed."""
    values = np.full(count, np.nan)
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            try:
                index, value = int(row[0]), float(row[1])
            except (IndexError, ValueError):
                if lineno == 1:
                    continue
                raise ConfigError(f"{path}:{lineno}: need 'element,value' rows")
            if not 0 <= index < count:
                raise ConfigError(f"{path}:{lineno}: element {index} is out of "
                                  f"range for {count} elements")
            values[index] = value
    missing = int(np.isnan(values).sum())
    if missing:
        raise ConfigError(f"{path}: {missing} of {count} elements have no "
                          f"population value")
    if np.any(values <= 0.0):
        raise ConfigError(f"{path}: population values must be positive")
    return values


# -- figures -----------------------------------------------------------------

def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def _histogram_svg(report: QualityReport, path: Path, title: str) -> None:
    """Normalized density histogram before and after, shared axis."""
    edges = report.hist_edges
    centers = 0.5 * (edges[:-1] + edges[1:])
    width = 0.92 * (edges[1] - edges[0])
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    ax.bar(centers, report.hist_initial, width=width, color="0.65",
           label="initial")
    ax.bar(centers, report.hist_final, width=width, color="#1f77b4",
           alpha=0.7, label="final")
    ax.set_xlabel("density / mean")
    ax.set_ylabel("elements")
    ax.set_title(title)
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)


def _map_svg(positions: NDArray, faces: NDArray, densities: NDArray,
             path: Path, title: str) -> None:
    """Deformed triangulation shaded by final density."""
    tri = Triangulation(positions[:, 0], positions[:, 1], faces)
    fig, ax = plt.subplots(figsize=(4.8, 4.4))
    shading = ax.tripcolor(tri, facecolors=densities / densities.mean(),
                           cmap="viridis", edgecolors="none")
    ax.triplot(tri, color="black", linewidth=0.15, alpha=0.5)
    fig.colorbar(shading, ax=ax, label="density / mean")
    ax.set_aspect("equal")
    ax.set_title(title)
    fig.tight_layout()
    _save(fig, path)


# -- subcommands -------------------------------------------------------------

def _outdir(cfg: RunConfig) -> Path:
    cfg.out.mkdir(parents=True, exist_ok=True)
    return cfg.out


def cmd_map2d(cfg: RunConfig) -> list[Path]:
    """Coarse-to-dense 2D pipeline; writes both meshes, the summary and
    face tables, and the histogram and map figures."""
    if cfg.generator is None:
        raise ConfigError("map2d needs a generator (--generator or config)")
    _check_generator(cfg.generator, 2)
    started = time.perf_counter()
    result = run_pipeline_2d(
        generator=cfg.generator,
        d_coarse=cfg.d_coarse, d_dense=cfg.d_dense, seed=cfg.seed,
        generator_params=cfg.generator_params,
        coarse_schedule=_merge_schedule(COARSE_SCHEDULE_2D,
                                        cfg.schedules.get("coarse")),
        dense_schedule=_merge_schedule(DENSE_SCHEDULE_2D,
                                       cfg.schedules.get("dense")),
        dense_weights=_merge_weights(default_weights_2d(cfg.d_dense),
                                     cfg.weights))
    runtime = time.perf_counter() - started

    report = quality_report(result.grid, result.positions, result.populations)
    before = quality_report(result.grid, result.grid.vertices,
                            result.populations)
    out = _outdir(cfg)
    write_obj(out / "coarse.obj", result.coarse_positions,
              result.coarse_grid.faces)
    write_obj(out / "dense.obj", result.positions, result.grid.faces)
    write_summary_csv([summary_row(cfg.label, "initial", before, 0.0),
                       summary_row(cfg.label, "ldem", report, runtime)],
                      out / "summary.csv")
    write_face_csv(report, out / "faces.csv")
    _histogram_svg(report, out / "histogram.svg", cfg.label)
    _map_svg(result.positions, result.grid.faces, report.densities,
             out / "map.svg", cfg.label)
    return [out / name for name in ("coarse.obj", "dense.obj", "summary.csv",
                                    "faces.csv", "histogram.svg", "map.svg")]


def cmd_baseline(cfg: RunConfig) -> list[Path]:
    """Diffusion reference method on the dense 2D grid."""
    if cfg.generator is None:
        raise ConfigError("baseline needs a generator (--generator or config)")
    _check_generator(cfg.generator, 2)
    grid = make_grid_2d(cfg.d_dense)
    populations = evaluate(cfg.generator, grid.centroids(),
                           **cfg.generator_params)
    options = cfg.baseline
    m = int(options.get("m", 64))
    started = time.perf_counter()
    result = run_diffusion(grid, populations, m=m,
                           dt=_resolve_dt(options.get("dt"), m),
                           eps=float(options.get("eps", 1e-3)),
                           max_iters=int(options.get("max_iters", 100_000)))
    runtime = time.perf_counter() - started

    report = quality_report(grid, result.positions, populations)
    before = quality_report(grid, grid.vertices, populations)
    out = _outdir(cfg)
    write_obj(out / "diffused.obj", result.positions, grid.faces)
    write_summary_csv([summary_row(cfg.label, "initial", before, 0.0),
                       summary_row(cfg.label, "diffusion", report, runtime)],
                      out / "summary.csv")
    write_face_csv(report, out / "faces.csv")
    _histogram_svg(report, out / "histogram.svg", cfg.label)
    _map_svg(result.positions, grid.faces, report.densities,
             out / "map.svg", cfg.label)
    return [out / name for name in ("diffused.obj", "summary.csv", "faces.csv",
                                    "histogram.svg", "map.svg")]


def cmd_compare(cfg: RunConfig) -> list[Path]:
    """Diffusion and the trained map side by side, two summary rows per case.

    LDEM_THREADS sets the worker count; row order follows the case list
    either way.
    """
    if cfg.generators:
        cases = list(cfg.generators)
    elif cfg.generator:
        cases = [cfg.generator]
    else:
        cases = list(COMPARE_CASES)
    for name in cases:
        _check_generator(name, 2)

    options = cfg.baseline
    m = int(options.get("m", 64))
    dt = _resolve_dt(options.get("dt"), m)
    eps = float(options.get("eps", 1e-3))
    max_iters = int(options.get("max_iters", 100_000))
    coarse_schedule = _merge_schedule(COARSE_SCHEDULE_2D,
                                      cfg.schedules.get("coarse"))
    dense_schedule = _merge_schedule(DENSE_SCHEDULE_2D,
                                     cfg.schedules.get("dense"))
    dense_weights = _merge_weights(default_weights_2d(cfg.d_dense),
                                   cfg.weights)

    def run_case(name: str) -> list[dict]:
        grid = make_grid_2d(cfg.d_dense)
        populations = evaluate(name, grid.centroids(), **cfg.generator_params)
        started = time.perf_counter()
        diffused = run_diffusion(grid, populations, m=m, dt=dt, eps=eps,
                                 max_iters=max_iters)
        diffusion_row = summary_row(
            name, "diffusion",
            quality_report(grid, diffused.positions, populations),
            time.perf_counter() - started)
        started = time.perf_counter()
        trained = run_pipeline_2d(
            populations=populations, d_coarse=cfg.d_coarse,
            d_dense=cfg.d_dense, seed=cfg.seed,
            coarse_schedule=coarse_schedule, dense_schedule=dense_schedule,
            dense_weights=dense_weights)
        ldem_row = summary_row(
            name, "ldem",
            quality_report(trained.grid, trained.positions, populations),
            time.perf_counter() - started)
        return [diffusion_row, ldem_row]

    workers = int(os.environ.get("LDEM_THREADS", "1") or "1")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_case = list(pool.map(run_case, cases))
    else:
        per_case = [run_case(name) for name in cases]

    out = _outdir(cfg)
    write_summary_csv([row for rows in per_case for row in rows],
                      out / "summary.csv")
    return [out / "summary.csv"]


def cmd_map3d(cfg: RunConfig) -> list[Path]:
    """Single-stage 3D pipeline; writes the boundary mesh, the tetrahedron
    list, and the summary, element table, and histogram."""
    if cfg.generator is None:
        raise ConfigError("map3d needs a generator (--generator or config)")
    _check_generator(cfg.generator, 3)
    started = time.perf_counter()
    result = run_pipeline_3d(
        generator=cfg.generator, d_coarse=cfg.d_coarse, seed=cfg.seed,
        generator_params=cfg.generator_params,
        schedule=_merge_schedule(COARSE_SCHEDULE_3D,
                                 cfg.schedules.get("coarse")),
        weights=_merge_weights(WEIGHTS_3D, cfg.weights))
    runtime = time.perf_counter() - started

    report = quality_report(result.grid, result.positions, result.populations)
    before = quality_report(result.grid, result.grid.vertices,
                            result.populations)
    out = _outdir(cfg)
    write_volume(out / "volume.obj", out / "elements.txt",
                 result.positions, result.grid.cells)
    write_summary_csv([summary_row(cfg.label, "initial", before, 0.0),
                       summary_row(cfg.label, "ldem", report, runtime)],
                      out / "summary.csv")
    write_face_csv(report, out / "faces.csv")
    _histogram_svg(report, out / "histogram.svg", cfg.label)
    return [out / name for name in ("volume.obj", "elements.txt",
                                    "summary.csv", "faces.csv",
                                    "histogram.svg")]


def cmd_remesh(cfg: RunConfig) -> list[Path]:
    """Equalize a surface parameterization, pull a regular grid back through
    it, and report the parameter-map quality."""
    options = cfg.remesh
    surface = options.get("surface", "hemisphere")
    if surface in NAMED_SURFACES:
        mesh = NAMED_SURFACES[surface]()
    else:
        mesh = load_surface(surface)
    planar = tutte_embed(mesh)

    if options.get("population"):
        populations = _read_population_csv(options["population"],
                                           len(mesh.faces))
    elif cfg.generator:
        _check_generator(cfg.generator, 2)
        populations = evaluate(cfg.generator, planar[mesh.faces].mean(axis=1),
                               **cfg.generator_params)
    else:
        populations = np.ones(len(mesh.faces))

    started = time.perf_counter()
    deformed = equalize_parameter_mesh(
        planar, mesh.faces, populations, seed=cfg.seed,
        schedule=_merge_schedule(REMESH_SCHEDULE, cfg.schedules.get("dense")),
        regularization=float(options.get("regularization", 0.1)))
    resampled = pull_back_grid(mesh, deformed, int(options.get("m", 25)))
    runtime = time.perf_counter() - started

    report = planar_report(planar, deformed, mesh.faces, populations)
    before = planar_report(planar, planar, mesh.faces, populations)
    case = cfg.case or (surface if surface in NAMED_SURFACES
                        else Path(surface).stem)
    out = _outdir(cfg)
    write_obj(out / "remeshed.obj", resampled.vertices, resampled.faces)
    write_obj(out / "parameter.obj", deformed, mesh.faces)
    write_summary_csv([summary_row(case, "initial", before, 0.0),
                       summary_row(case, "remesh", report, runtime)],
                      out / "summary.csv")
    write_face_csv(report, out / "faces.csv")
    _histogram_svg(report, out / "histogram.svg", case)
    return [out / name for name in ("remeshed.obj", "parameter.obj",
                                    "summary.csv", "faces.csv",
                                    "histogram.svg")]


def cmd_metrics(cfg: RunConfig) -> list[Path]:
    """Metric bundle for a stored reference/deformed planar mesh pair."""
    pair = cfg.metrics
    if not pair:
        raise ConfigError("metrics needs a config block naming the two meshes")
    ref_vertices, ref_faces = read_obj(pair["reference"])
    def_vertices, def_faces = read_obj(pair["deformed"])
    if (len(ref_vertices) != len(def_vertices)
            or not np.array_equal(ref_faces, def_faces)):
        raise ConfigError("the two meshes must share one triangulation")
    if pair.get("populations"):
        populations = _read_population_csv(pair["populations"], len(ref_faces))
    else:
        populations = np.ones(len(ref_faces))

    report = planar_report(ref_vertices, def_vertices, ref_faces, populations)
    out = _outdir(cfg)
    write_summary_csv([summary_row(cfg.label, "metrics", report, 0.0)],
                      out / "summary.csv")
    write_face_csv(report, out / "faces.csv")
    _histogram_svg(report, out / "histogram.svg", cfg.label)
    return [out / name for name in ("summary.csv", "faces.csv",
                                    "histogram.svg")]


# -- entry point -------------------------------------------------------------

COMMANDS = {"map2d": cmd_map2d, "map3d": cmd_map3d, "baseline": cmd_baseline,
            "compare": cmd_compare, "remesh": cmd_remesh,
            "metrics": cmd_metrics}

_HELP = {
    "map2d": "train a 2D density-equalizing map",
    "map3d": "train a 3D density-equalizing map",
    "baseline": "run the diffusion reference method",
    "compare": "run diffusion and the trained map over a case list",
    "remesh": "density-adapt the sampling of a surface mesh",
    "metrics": "measure a stored reference/deformed mesh pair",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ldem",
        description="Density-equalizing maps: train, compare, remesh, "
                    "and measure.")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode, help=_HELP[mode])
        p.add_argument("--config", metavar="PATH|PRESET",
                       help="JSON config file, or a packaged preset name")
        p.add_argument("--seed", type=int, metavar="N")
        p.add_argument("--out", metavar="DIR")
        p.add_argument("--generator", metavar="NAME")
        p.add_argument("--d-coarse", type=int, dest="d_coarse", metavar="N")
        p.add_argument("--d-dense", type=int, dest="d_dense", metavar="N")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = load_config(args.config) if args.config else {}
        raw["mode"] = args.mode
        for key in ("seed", "out", "generator", "d_coarse", "d_dense"):
            value = getattr(args, key)
            if value is not None:
                raw[key] = value
        validate_config(raw)
        written = COMMANDS[args.mode](RunConfig.from_mapping(raw))
    except ConfigError as exc:
        print(f"ldem: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, RuntimeError, OSError) as exc:
        print(f"ldem: {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Bottleneck network and the hierarchical training pipelines.

The network maps a per-element population vector x straight to flattened
node coordinates:

    y = W2 . ReLU(Conv1D(sigmoid(W1 x + b1))) + b2

with a width-1 bottleneck and a length-1 convolution kernel by default, so
nearly all capacity sits in W2/b2.  Training runs in two phases per grid:
an initialization phase that regresses the output onto target coordinates
(mean squared error), then a fine-tuning phase on the deformation loss with
gradient clipping and optional early stopping.  The 2D pipeline trains a
coarse grid first and transfers its deformation to a dense grid bilinearly;
the 3D pipeline trains a single coarse grid.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from . import autodiff as ad
from .autodiff import Adam, Var
from .fields import evaluate
from .geometry import TetGrid3D, TriGrid2D, make_grid_2d, make_grid_3d
from .hierarchy import aggregate_population, bilinear_transfer
from .losses import LossWeights, total_loss


class TrainingDiverged(RuntimeError):
    """Raised when a non-finite loss appears; carries the offending epoch."""

    def __init__(self, phase: str, epoch: int, value: float):
        super().__init__(f"{phase} loss became {value} at epoch {epoch}")
        self.phase = phase
        self.epoch = epoch
        self.value = value


@dataclass
class TransformModel:
    """Parameter container; forward passes build a fresh graph every call."""

    w1: NDArray  # (bottleneck, input_size)
    b1: NDArray  # (bottleneck,)
    kernel: NDArray  # (kernel_size,)
    w2: NDArray  # (output_size, bottleneck)
    b2: NDArray  # (output_size,)

    @classmethod
    def initialize(cls, input_size: int, output_size: int,
                   rng: np.random.Generator, bottleneck: int = 1,
                   kernel_size: int = 1) -> "TransformModel":
        """Uniform initialization scaled by 1/sqrt(fan-in), layer by layer."""
        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        return cls(
            w1=uniform((bottleneck, input_size), input_size),
            b1=uniform((bottleneck,), input_size),
            kernel=uniform((kernel_size,), kernel_size),
            w2=uniform((output_size, bottleneck), bottleneck),
            b2=uniform((output_size,), bottleneck),
        )

    @property
    def input_size(self) -> int:
        return self.w1.shape[1]

    @property
    def output_size(self) -> int:
        return self.b2.shape[0]

    def parameters(self) -> list[NDArray]:
        return [self.w1, self.b1, self.kernel, self.w2, self.b2]

    def load_parameters(self, params: list[NDArray]) -> None:
        for dst, src in zip(self.parameters(), params):
            dst[...] = src

    def forward_graph(self, x: NDArray) -> tuple[Var, list[Var]]:
        """Output Var plus the parameter Vars of this graph, in order."""
        pvars = [Var(p) for p in self.parameters()]
        w1, b1, kernel, w2, b2 = pvars
        z = ad.sigmoid(ad.matvec(w1, Var(x)) + b1)
        h = ad.relu(ad.conv1d(z, kernel))
        y = ad.matvec(w2, h) + b2
        return y, pvars

    def forward(self, x: NDArray) -> NDArray:
        return self.forward_graph(x)[0].value


@dataclass(frozen=True)
class Schedule:
    """Per-grid learning schedule for both training phases."""

    init_lr: float = 1e-2
    init_epochs: int = 800
    train_lr: float = 3e-3
    max_epochs: int = 5000
    patience: int | None = 500
    min_delta: float = 1e-4
    warmup_epochs: int = 150
    clip_threshold: float = 1.0


COARSE_SCHEDULE_2D = Schedule()
DENSE_SCHEDULE_2D = Schedule(train_lr=2e-4, max_epochs=300, patience=None)
# Harsh population contrasts leave the coarse stage with a large residual
# that the short polish cannot absorb; the extended budget is what the
# extreme-contrast preset uses.
DENSE_SCHEDULE_2D_LONG = Schedule(train_lr=2e-4, max_epochs=1000, patience=None)
COARSE_SCHEDULE_3D = Schedule(init_epochs=1500, train_lr=1e-4, patience=200)


def default_weights_2d(resolution: int) -> LossWeights:
    """Density weight tracks the grid resolution; slope 1, distance 10."""
    return LossWeights(density=float(resolution), slope=1.0, distance=10.0)


WEIGHTS_3D = LossWeights(density=1.0, slope=0.0, distance=1.0)


@dataclass
class TrainingResult:
    loss_history: list[float] = field(default_factory=list)
    best_loss: float = np.inf
    best_epoch: int = 0
    stopped_epoch: int = 0

    @property
    def epochs_run(self) -> int:
        return len(self.loss_history)


def init_phase(model: TransformModel, x: NDArray, target: NDArray,
               lr: float, epochs: int) -> TrainingResult:
    """Adam on mean squared error between the forward pass and target."""
    params = model.parameters()
    opt = Adam(params, lr=lr)
    result = TrainingResult()
    target = np.asarray(target, dtype=np.float64)
    for epoch in range(1, epochs + 1):
        y, pvars = model.forward_graph(x)
        loss = ad.mean(ad.square(y - target))
        value = float(loss.value)
        if not np.isfinite(value):
            raise TrainingDiverged("initialization", epoch, value)
        grads = ad.gradients(loss, pvars)
        opt.step(params, grads)
        result.loss_history.append(value)
        if value < result.best_loss:
            result.best_loss = value
            result.best_epoch = epoch
    result.stopped_epoch = len(result.loss_history)
    return result


def finetune_phase(model: TransformModel, x: NDArray, loss_fn,
                   schedule: Schedule, dim: int) -> TrainingResult:
    """Adam on loss_fn(positions) with clipping; restores best parameters.

    Early stopping counts epochs whose loss fails to undercut the running
    best by min_delta; the counter never advances during warm-up and the
    loop stops once it reaches `patience`.  The parameters left on the
    model afterwards are the best seen, not the last.
    """
    params = model.parameters()
    opt = Adam(params, lr=schedule.train_lr)
    result = TrainingResult()
    best_params = [p.copy() for p in params]
    best_monitor = np.inf
    wait = 0
    nodes = model.output_size // dim

    for epoch in range(1, schedule.max_epochs + 1):
        y, pvars = model.forward_graph(x)
        loss = loss_fn(y.reshape(nodes, dim))
        value = float(loss.value)
        if not np.isfinite(value):
            raise TrainingDiverged("fine-tuning", epoch, value)
        result.loss_history.append(value)

        # snapshot before the step: the loss belongs to the current params
        if value < result.best_loss:
            result.best_loss = value
            result.best_epoch = epoch
            best_params = [p.copy() for p in params]

        grads = ad.clip_gradients(ad.gradients(loss, pvars),
                                  schedule.clip_threshold)
        opt.step(params, grads)

        if schedule.patience is None:
            continue
        if value < best_monitor - schedule.min_delta:
            best_monitor = value
            wait = 0
        elif epoch > schedule.warmup_epochs:
            wait += 1
            if wait >= schedule.patience:
                break

    result.stopped_epoch = len(result.loss_history)
    model.load_parameters(best_params)
    return result


# -- pipelines ---------------------------------------------------------------

@dataclass
class PipelineResult:
    """Everything a report needs about one trained map."""

    grid: TriGrid2D | TetGrid3D
    populations: NDArray
    positions: NDArray
    init_result: TrainingResult
    train_result: TrainingResult
    model: TransformModel
    coarse_grid: TriGrid2D | None = None
    coarse_populations: NDArray | None = None
    coarse_positions: NDArray | None = None
    coarse_init_result: TrainingResult | None = None
    coarse_train_result: TrainingResult | None = None
    coarse_model: TransformModel | None = None


def _train_grid(grid, populations, elements, dim, weights, schedule,
                rng, init_target):
    model = TransformModel.initialize(len(populations), grid.num_vertices * dim, rng)
    init_res = init_phase(model, populations, init_target.ravel(),
                          schedule.init_lr, schedule.init_epochs)

    def loss_fn(positions: Var) -> Var:
        return total_loss(positions, elements, populations, grid.n, dim, weights)

    train_res = finetune_phase(model, populations, loss_fn, schedule, dim)
    positions = model.forward(populations).reshape(grid.num_vertices, dim)
    return model, init_res, train_res, positions


def run_pipeline_2d(generator: str | None = None,
                    populations: NDArray | None = None,
                    d_coarse: int = 16, d_dense: int = 51,
                    seed: int = 0,
                    generator_params: dict | None = None,
                    coarse_schedule: Schedule = COARSE_SCHEDULE_2D,
                    dense_schedule: Schedule = DENSE_SCHEDULE_2D,
                    coarse_weights: LossWeights | None = None,
                    dense_weights: LossWeights | None = None) -> PipelineResult:
    """Coarse-to-dense 2D pipeline.

    Provide either a registered generator name or an explicit per-face
    population vector for the dense grid.
    """
    rng = np.random.default_rng(seed)
    dense = make_grid_2d(d_dense)
    if populations is None:
        if generator is None:
            raise ValueError("need a generator name or explicit populations")
        populations = evaluate(generator, dense.centroids(),
                               **(generator_params or {}))
    populations = np.asarray(populations, dtype=np.float64)
    if populations.shape != (dense.num_faces,):
        raise ValueError(f"expected {dense.num_faces} dense populations, "
                         f"got {populations.shape}")

    coarse = make_grid_2d(d_coarse)
    coarse_pop = aggregate_population(coarse.centroids(), dense.centroids(),
                                      populations, radius=1.0 / d_coarse)

    cw = coarse_weights or default_weights_2d(d_coarse)
    c_model, c_init, c_train, c_pos = _train_grid(
        coarse, coarse_pop, coarse.faces, 2, cw, coarse_schedule,
        rng, init_target=coarse.vertices)

    # Carry the coarse deformation over as the dense initialization target.
    dense_target = bilinear_transfer(c_pos, dense.vertices)
    dw = dense_weights or default_weights_2d(d_dense)
    d_model, d_init, d_train, d_pos = _train_grid(
        dense, populations, dense.faces, 2, dw, dense_schedule,
        rng, init_target=dense_target)

    return PipelineResult(
        grid=dense, populations=populations, positions=d_pos,
        init_result=d_init, train_result=d_train, model=d_model,
        coarse_grid=coarse, coarse_populations=coarse_pop,
        coarse_positions=c_pos, coarse_init_result=c_init,
        coarse_train_result=c_train, coarse_model=c_model)


def run_pipeline_3d(generator: str | None = None,
                    populations: NDArray | None = None,
                    d_coarse: int = 16, seed: int = 0,
                    generator_params: dict | None = None,
                    schedule: Schedule = COARSE_SCHEDULE_3D,
                    weights: LossWeights = WEIGHTS_3D) -> PipelineResult:
    """Single-grid 3D pipeline (no dense refinement stage)."""
    rng = np.random.default_rng(seed)
    grid = make_grid_3d(d_coarse)
    if populations is None:
        if generator is None:
            raise ValueError("need a generator name or explicit populations")
        populations = evaluate(generator, grid.centroids(),
                               **(generator_params or {}))
    populations = np.asarray(populations, dtype=np.float64)
    if populations.shape != (grid.num_cells,):
        raise ValueError(f"expected {grid.num_cells} cell populations, "
                         f"got {populations.shape}")

    model, init_res, train_res, positions = _train_grid(
        grid, populations, grid.cells, 3, weights, schedule,
        rng, init_target=grid.vertices)
    return PipelineResult(grid=grid, populations=populations,
                          positions=positions, init_result=init_res,
                          train_result=train_res, model=model)


# -- checkpoints -------------------------------------------------------------

_MAGIC = b"LDEM"
_VERSION = 1


def save_checkpoint(model: TransformModel, path, dimension: int) -> None:
    """Flat binary: magic, u32 version, u32 dimension, u32 sizes, f64 params."""
    sizes = (model.w1.shape[1], model.w1.shape[0],
             model.kernel.shape[0], model.b2.shape[0])
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<II", _VERSION, dimension)
    blob += struct.pack("<4I", *sizes)
    for p in model.parameters():
        blob += np.ascontiguousarray(p, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path) -> tuple[TransformModel, int]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"not a model checkpoint: {path}")
    version, dimension = struct.unpack_from("<II", raw, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    i, b, k, o = struct.unpack_from("<4I", raw, 12)
    offset = 28
    shapes = [(b, i), (b,), (k,), (o, b), (o,)]
    expected = offset + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(raw) != expected:
        raise ValueError("checkpoint length does not match its header")
    params = []
    for shape in shapes:
        count = int(np.prod(shape))
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        params.append(arr.astype(np.float64).reshape(shape))
        offset += count * 8
    return TransformModel(*params), dimension

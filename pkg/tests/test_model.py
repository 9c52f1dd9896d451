"""Network layers, the two training phases, pipelines, and checkpoints."""

import dataclasses

import numpy as np
import pytest

from ldem import autodiff as ad
from ldem import model
from ldem.geometry import make_grid_2d, make_grid_3d
from ldem.losses import LossWeights
from ldem.model import (
    COARSE_SCHEDULE_2D,
    Schedule,
    TrainingDiverged,
    TransformModel,
    default_weights_2d,
    finetune_phase,
    init_phase,
    load_checkpoint,
    run_pipeline_2d,
    run_pipeline_3d,
    save_checkpoint,
)
from fdcheck import assert_gradients_match


def small_model(seed=0, input_size=8, output_size=18):
    return TransformModel.initialize(input_size, output_size,
                                     np.random.default_rng(seed))


# -- initialization ----------------------------------------------------------

def test_initialize_shapes_and_bounds():
    net = TransformModel.initialize(450, 512, np.random.default_rng(0))
    assert net.w1.shape == (1, 450)
    assert net.b1.shape == (1,)
    assert net.kernel.shape == (1,)
    assert net.w2.shape == (512, 1)
    assert net.b2.shape == (512,)
    bound = 1.0 / np.sqrt(450)
    assert np.all(np.abs(net.w1) <= bound)
    assert np.all(np.abs(net.b1) <= bound)
    # kernel and the output layer see their own fan-in of 1
    assert np.all(np.abs(net.kernel) <= 1.0)
    assert np.all(np.abs(net.w2) <= 1.0)
    assert np.all(np.abs(net.b2) <= 1.0)


def test_initialize_same_seed_same_parameters():
    a = small_model(seed=7)
    b = small_model(seed=7)
    for pa, pb in zip(a.parameters(), b.parameters()):
        np.testing.assert_array_equal(pa, pb)


def test_initialize_wider_bottleneck_shapes():
    net = TransformModel.initialize(10, 12, np.random.default_rng(0),
                                    bottleneck=3, kernel_size=3)
    assert net.w1.shape == (3, 10)
    assert net.kernel.shape == (3,)
    assert net.w2.shape == (12, 3)


# -- forward pass ------------------------------------------------------------

def test_forward_bias_only_identity():
    net = small_model()
    net.w2[...] = 0.0
    net.b2[...] = np.arange(18.0)
    out = net.forward(np.ones(8))
    np.testing.assert_array_equal(out, np.arange(18.0))


def test_forward_matches_manual_composition():
    net = small_model(seed=3)
    x = np.random.default_rng(5).uniform(0.5, 2.0, size=8)
    z = 1.0 / (1.0 + np.exp(-(net.w1 @ x + net.b1)))
    h = np.maximum(np.convolve(z, net.kernel[::-1], mode="same"), 0.0)
    expected = net.w2 @ h + net.b2
    np.testing.assert_allclose(net.forward(x), expected, rtol=1e-12)


def test_forward_gradients_match_finite_differences():
    net = small_model(seed=11)
    x = np.random.default_rng(13).uniform(0.5, 2.0, size=8)
    probe = np.random.default_rng(17).standard_normal(18)

    y, pvars = net.forward_graph(x)
    loss = ad.total(y * ad.as_var(probe))
    grads = ad.gradients(loss, pvars)

    def f(params):
        stub = TransformModel(*[np.array(p) for p in params])
        return float(stub.forward(x) @ probe)

    assert_gradients_match(f, net.parameters(), grads)


# -- initialization phase ----------------------------------------------------

def test_init_phase_regresses_to_target():
    grid = make_grid_2d(6)
    rng = np.random.default_rng(0)
    pops = rng.uniform(0.5, 2.0, size=grid.num_faces)
    net = TransformModel.initialize(grid.num_faces, 2 * grid.num_vertices, rng)
    result = init_phase(net, pops, grid.vertices.ravel(), lr=1e-2, epochs=800)
    assert result.epochs_run == 800
    assert result.best_loss < 1e-6
    deviation = np.abs(net.forward(pops) - grid.vertices.ravel()).max()
    assert deviation <= 1e-2


def test_init_phase_loss_history_decreases_overall():
    grid = make_grid_2d(5)
    rng = np.random.default_rng(1)
    pops = rng.uniform(0.5, 2.0, size=grid.num_faces)
    net = TransformModel.initialize(grid.num_faces, 2 * grid.num_vertices, rng)
    result = init_phase(net, pops, grid.vertices.ravel(), lr=1e-2, epochs=200)
    assert result.loss_history[-1] < result.loss_history[0]


# -- fine-tuning phase -------------------------------------------------------

def finetuned(schedule, seed=0, n=5):
    grid = make_grid_2d(n)
    rng = np.random.default_rng(seed)
    pops = rng.uniform(0.5, 2.0, size=grid.num_faces)
    net = TransformModel.initialize(grid.num_faces, 2 * grid.num_vertices, rng)
    init_phase(net, pops, grid.vertices.ravel(), lr=1e-2, epochs=400)

    def loss_fn(positions):
        from ldem.losses import total_loss
        return total_loss(positions, grid.faces, pops, grid.n, 2,
                          default_weights_2d(grid.n))

    return finetune_phase(net, pops, loss_fn, schedule, 2), net, grid, pops


def test_finetune_reduces_loss():
    # structured population with a genuinely non-uniform density to equalize
    from ldem.fields import evaluate
    grid = make_grid_2d(8)
    pops = evaluate("basic_sinusoidal", grid.centroids())
    rng = np.random.default_rng(0)
    net = TransformModel.initialize(grid.num_faces, 2 * grid.num_vertices, rng)
    init_phase(net, pops, grid.vertices.ravel(), lr=1e-2, epochs=400)

    def loss_fn(positions):
        from ldem.losses import total_loss
        return total_loss(positions, grid.faces, pops, grid.n, 2,
                          default_weights_2d(grid.n))

    sched = Schedule(max_epochs=1000, patience=None)
    result = finetune_phase(net, pops, loss_fn, sched, 2)
    assert result.best_loss < 0.5 * result.loss_history[0]
    assert result.epochs_run == 1000


def test_finetune_stops_right_after_warmup_when_nothing_counts():
    # min_delta=inf makes every epoch a non-improvement; the wait counter
    # only advances after the warm-up window, so the stop lands one past it.
    sched = Schedule(max_epochs=5000, patience=1, min_delta=np.inf,
                     warmup_epochs=25)
    result, _, _, _ = finetuned(sched)
    assert result.epochs_run == 26


def test_finetune_patience_counts_full_stall():
    sched = Schedule(max_epochs=5000, patience=40, min_delta=np.inf,
                     warmup_epochs=10)
    result, _, _, _ = finetuned(sched)
    assert result.epochs_run == 50


def test_finetune_restores_best_parameters():
    sched = Schedule(max_epochs=400, patience=None)
    result, net, grid, pops = finetuned(sched, seed=2)
    best = result.best_loss
    # the parameters left on the model must reproduce the best loss exactly
    from ldem.losses import total_loss
    y = net.forward(pops).reshape(grid.num_vertices, 2)
    value = float(total_loss(ad.as_var(y.ravel()).reshape(grid.num_vertices, 2),
                             grid.faces, pops, grid.n, 2,
                             default_weights_2d(grid.n)).value)
    assert value == pytest.approx(best, rel=0, abs=0)
    assert result.best_epoch <= result.stopped_epoch


def test_finetune_raises_on_nonfinite_loss():
    grid = make_grid_2d(4)
    rng = np.random.default_rng(0)
    pops = rng.uniform(0.5, 2.0, size=grid.num_faces)
    net = TransformModel.initialize(grid.num_faces, 2 * grid.num_vertices, rng)
    net.b2[...] = np.nan

    def loss_fn(positions):
        from ldem.losses import total_loss
        return total_loss(positions, grid.faces, pops, grid.n, 2,
                          default_weights_2d(grid.n))

    with pytest.raises(TrainingDiverged) as excinfo:
        finetune_phase(net, pops, loss_fn, Schedule(max_epochs=10), 2)
    assert excinfo.value.phase == "fine-tuning"
    assert excinfo.value.epoch == 1


# -- pipelines ---------------------------------------------------------------

def test_pipeline_2d_uniform_population_stays_near_identity():
    grid = make_grid_2d(9)
    pops = np.ones(grid.num_faces)
    sched = Schedule(init_epochs=400, max_epochs=200, patience=None)
    res = run_pipeline_2d(populations=pops, d_coarse=6, d_dense=9,
                          coarse_schedule=sched, dense_schedule=sched)
    displacement = np.abs(res.positions - grid.vertices).max()
    assert displacement <= 0.02
    assert np.all(grid.areas(res.positions) > 0)


def test_pipeline_2d_requires_population_or_generator():
    with pytest.raises(ValueError):
        run_pipeline_2d()


def test_pipeline_2d_rejects_wrong_population_length():
    with pytest.raises(ValueError):
        run_pipeline_2d(populations=np.ones(7), d_coarse=4, d_dense=6)


def test_pipeline_2d_seed_determinism():
    sched = Schedule(init_epochs=200, max_epochs=100, patience=None)
    kwargs = dict(generator="basic_sinusoidal", d_coarse=5, d_dense=8,
                  seed=42, coarse_schedule=sched, dense_schedule=sched)
    a = run_pipeline_2d(**kwargs)
    b = run_pipeline_2d(**kwargs)
    np.testing.assert_array_equal(a.positions, b.positions)
    np.testing.assert_array_equal(a.coarse_positions, b.coarse_positions)


def test_pipeline_2d_improves_density_uniformity():
    sched_c = Schedule(max_epochs=1500, patience=300)
    sched_d = Schedule(train_lr=2e-4, max_epochs=150, patience=None)
    res = run_pipeline_2d(generator="basic_sinusoidal", d_coarse=10,
                          d_dense=17, coarse_schedule=sched_c,
                          dense_schedule=sched_d)
    dens0 = res.populations / res.grid.areas(res.grid.vertices)
    dens1 = res.populations / res.grid.areas(res.positions)
    before = dens0.std() / dens0.mean()
    after = dens1.std() / dens1.mean()
    assert after < 0.2 * before
    assert np.all(res.grid.areas(res.positions) > 0)


def test_pipeline_3d_uniform_population_stays_near_identity():
    grid = make_grid_3d(5)
    pops = np.ones(grid.num_cells)
    sched = Schedule(init_epochs=1500, train_lr=1e-4, max_epochs=100,
                     patience=None)
    res = run_pipeline_3d(populations=pops, d_coarse=5, schedule=sched)
    assert np.abs(res.positions - grid.vertices).max() <= 0.02
    assert np.all(grid.volumes(res.positions) > 0)


def test_pipeline_3d_rejects_wrong_population_length():
    with pytest.raises(ValueError):
        run_pipeline_3d(populations=np.ones(3), d_coarse=4)


# -- checkpoints -------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    net = small_model(seed=9)
    path = tmp_path / "model.bin"
    save_checkpoint(net, path, dimension=2)
    loaded, dim = load_checkpoint(path)
    assert dim == 2
    for a, b in zip(net.parameters(), loaded.parameters()):
        np.testing.assert_array_equal(a, b)


def test_checkpoint_forward_identical_after_reload(tmp_path):
    net = small_model(seed=4)
    x = np.random.default_rng(0).uniform(0.5, 2.0, size=8)
    path = tmp_path / "model.bin"
    save_checkpoint(net, path, dimension=3)
    loaded, _ = load_checkpoint(path)
    np.testing.assert_array_equal(net.forward(x), loaded.forward(x))


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"NOPE" + bytes(64))
    with pytest.raises(ValueError, match="not a model checkpoint"):
        load_checkpoint(path)


def test_checkpoint_rejects_truncated_file(tmp_path):
    net = small_model()
    path = tmp_path / "model.bin"
    save_checkpoint(net, path, dimension=2)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="length"):
        load_checkpoint(path)


def test_checkpoint_rejects_unknown_version(tmp_path):
    net = small_model()
    path = tmp_path / "model.bin"
    save_checkpoint(net, path, dimension=2)
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(ValueError, match="version"):
        load_checkpoint(path)

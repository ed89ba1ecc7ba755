from __future__ import annotations

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from ghvit.checkpoint import encode_checkpoint, load_checkpoint
from ghvit.config import build_run_config, load_run_config
from ghvit.data import BatchPlan, DatasetSplit, epoch_order, load_dataset
from ghvit.errors import ConfigError, GhvitError, TrainingDiverged
from ghvit.metrics import read_metrics
from ghvit.model import Model, build_variant
from ghvit.rng import Rng
from ghvit.tensor import Tensor, backward, float64_mode
from ghvit.train import (
    CHECKPOINT_NAME,
    METRICS_NAME,
    OptimizerState,
    TrainData,
    adam_step,
    cross_entropy,
    evaluate,
    model_config_for,
    model_from_checkpoint,
    run_training,
    train,
)


def test_cross_entropy_values():
    uniform = cross_entropy(Tensor(np.zeros((4, 10))), np.arange(4)).item()
    assert uniform == pytest.approx(math.log(10), abs=1e-6)
    logits = np.zeros((1, 10))
    logits[0, 3] = 30.0
    assert cross_entropy(Tensor(logits, dtype=np.float64), np.array([3])).item() < 1e-9


def test_cross_entropy_gradient_is_softmax_minus_onehot():
    with float64_mode():
        logits = Tensor(Rng(0).normal((3, 5), dtype=np.float64), requires_grad=True)
        labels = np.array([0, 4, 2])
        backward(cross_entropy(logits, labels))
    probs = np.exp(logits.data) / np.exp(logits.data).sum(axis=1, keepdims=True)
    probs[np.arange(3), labels] -= 1.0
    assert_allclose(logits.grad, probs / 3, atol=1e-12)


def test_cross_entropy_rejects_out_of_range_label():
    with pytest.raises(GhvitError, match="labels must lie"):
        cross_entropy(Tensor(np.zeros((2, 3))), np.array([0, 3]))


def test_adam_first_step_moves_by_lr_times_sign():
    p = {"w": Tensor(np.array([1.0, -1.0, 0.5]), requires_grad=True)}
    state = OptimizerState.for_params(p, lr=0.1)
    adam_step(p, {"w": np.array([2.0, -0.5, 0.0], dtype=np.float32)}, state)
    assert state.t == 1
    assert_allclose(p["w"].data, [0.9, -0.9, 0.5], atol=1e-6)


def test_adam_treats_missing_gradient_as_zero():
    p = {"w": Tensor(np.ones(2), requires_grad=True)}
    state = OptimizerState.for_params(p)
    adam_step(p, {"w": None}, state)
    assert_array_equal(p["w"].data, np.ones(2))


def test_evaluate_ties_go_to_lowest_index(tiny_config, tiny_split):
    model = Model.create(tiny_config, Rng(0))  # zero head: every logit ties
    expected = float(np.mean(tiny_split.labels == 0))
    assert evaluate(model, tiny_split) == pytest.approx(expected)


def test_zero_epochs_returns_initial_state(tiny_config, tiny_split, tmp_path):
    ckpt = train(tiny_config, TrainData(tiny_split, tiny_split), 0, BatchPlan(8), seed=1, checkpoint_path=tmp_path / "c")
    assert ckpt.history == [] and ckpt.epoch == 0 and ckpt.adam_step == 0
    assert (tmp_path / "c").exists()


def _learning_config():
    return build_variant("gcn_hvit_1", (8, 8, 1), num_classes=4, embed_dim=16, layers_per_level=1, heads=2)


def test_one_epoch_lowers_loss_below_uniform(tiny_split):
    records = []
    ckpt = train(
        _learning_config(),
        TrainData(tiny_split, tiny_split),
        1,
        BatchPlan(batch_size=8, seed=0),
        seed=0,
        lr=1e-2,
        on_epoch=records.append,
    )
    assert records == ckpt.history and len(records) == 1
    assert records[0].train_loss < math.log(4)
    assert ckpt.adam_step == 8 and ckpt.epoch == 1


def test_two_hundred_steps_fit_the_tiny_set(tiny_split):
    config = _learning_config()
    ckpt = train(config, TrainData(tiny_split, tiny_split), 25, BatchPlan(batch_size=8, seed=0), seed=0, lr=1e-2)
    assert ckpt.adam_step == 200
    assert ckpt.history[-1].train_loss < ckpt.history[0].train_loss
    assert evaluate(Model.from_arrays(config, ckpt.params), tiny_split) == 1.0


def test_training_is_bitwise_deterministic(tiny_config, tiny_split):
    data = TrainData(tiny_split, tiny_split)
    a = train(tiny_config, data, 2, BatchPlan(16, seed=3), seed=3, lr=5e-3)
    b = train(tiny_config, data, 2, BatchPlan(16, seed=3), seed=3, lr=5e-3)
    assert encode_checkpoint(a) == encode_checkpoint(b)


def test_resume_continues_the_same_trajectory(tiny_config, tiny_split):
    data = TrainData(tiny_split, tiny_split)
    plan = BatchPlan(16, seed=5)
    straight = train(tiny_config, data, 3, plan, seed=5, lr=5e-3)
    halfway = train(tiny_config, data, 1, plan, seed=5, lr=5e-3)
    resumed = train(tiny_config, data, 3, plan, seed=5, lr=5e-3, resume=halfway)
    assert encode_checkpoint(resumed) == encode_checkpoint(straight)


def test_divergence_raises_with_batch_index(tiny_config, tiny_split, tmp_path):
    bad = DatasetSplit(tiny_split.images[:16].copy(), tiny_split.labels[:16], num_classes=4)
    bad.images[5] = np.nan
    plan = BatchPlan(4, seed=0)
    with pytest.raises(TrainingDiverged) as info:
        train(tiny_config, TrainData(bad, bad), 1, plan, seed=0, checkpoint_path=tmp_path / "c")
    position = int(np.nonzero(epoch_order(16, plan, 0) == 5)[0][0])
    assert info.value.batch_index == position // 4
    assert load_checkpoint(tmp_path / "c").epoch == 0


def test_run_training_writes_artifacts_and_eval_matches(tiny_run_file):
    run = load_run_config(tiny_run_file)
    ckpt = run_training(run)
    assert (run.out / CHECKPOINT_NAME).is_file()
    history = read_metrics(run.out / METRICS_NAME)
    assert len(history) == 2 and history == ckpt.history

    reloaded, model = model_from_checkpoint(load_checkpoint(run.out / CHECKPOINT_NAME))
    assert reloaded == run
    test = load_dataset(run.dataset, run.data_dir, "test")
    assert evaluate(model, test) == history[-1].test_accuracy


def test_run_config_echo_drives_model_config():
    run = build_run_config({"variant": "vit16", "embed_dim": "8", "heads": "2"})
    config = model_config_for(run)
    assert config.variant == "vit16" and config.image_h == 28 and config.embed_dim == 8


def test_evaluate_oracle_and_constant_predictors(tiny_split, monkeypatch):
    import ghvit.train as train_module

    # tiny_split labels cycle through 4 classes, so it is balanced
    monkeypatch.setattr(train_module, "predict", lambda model, images: np.zeros(len(images), dtype=np.int64))
    assert evaluate(None, tiny_split, batch_size=10) == pytest.approx(0.25)

    lookup = {img.tobytes(): label for img, label in zip(tiny_split.images, tiny_split.labels)}
    monkeypatch.setattr(
        train_module, "predict", lambda model, images: np.array([lookup[img.tobytes()] for img in images])
    )
    assert evaluate(None, tiny_split, batch_size=10) == 1.0


def test_epoch_without_batches_is_rejected(tiny_config, tiny_split):
    plan = BatchPlan(batch_size=100, drop_last=True)
    with pytest.raises(ConfigError, match="no training batches: 64 examples"):
        train(tiny_config, TrainData(tiny_split, tiny_split), 1, plan, seed=0)
    assert train(tiny_config, TrainData(tiny_split, tiny_split), 0, plan, seed=0).epoch == 0

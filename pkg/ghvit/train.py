"""Supervised training: cross-entropy, Adam, accuracy and the epoch loop."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional

import numpy as np
from tqdm import tqdm

from ghvit.checkpoint import Checkpoint, save_checkpoint
from ghvit.config import RunConfig, settings
from ghvit.data import DATASETS, BatchPlan, DatasetSplit, batch_count, batches, load_dataset
from ghvit.errors import ConfigError, GhvitError, NonFiniteError, TrainingDiverged
from ghvit.metrics import EpochRecord, write_metrics
from ghvit.model import Model, ModelConfig, Params, build_variant
from ghvit.rng import INIT_STREAM, Rng
from ghvit.tensor import Function, Tensor, backward, no_grad

logger = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.ghvt"
METRICS_NAME = "metrics.jsonl"

EpochCallback = Callable[[EpochRecord], None]


# ----------------------------------------------------------------------
# loss
# ----------------------------------------------------------------------
class CrossEntropy(Function):
    """Mean negative log-likelihood of integer labels, via log-sum-exp."""

    def forward(self, logits, labels):
        b, k = logits.shape
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != (b,):
            raise GhvitError(f"expected {b} labels, got shape {labels.shape}")
        if len(labels) and (labels.min() < 0 or labels.max() >= k):
            raise GhvitError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_probs = shifted - log_z
        self.probs = np.exp(log_probs)
        self.labels = labels
        return np.asarray(-log_probs[np.arange(b), labels].mean(), dtype=logits.dtype)

    def backward(self, grad):
        b = len(self.labels)
        g = self.probs.copy()
        g[np.arange(b), self.labels] -= 1.0
        return (g * (grad / b),)


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    return CrossEntropy.apply(logits, labels=labels)


# ----------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------
@dataclass(eq=False)
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Params, **hyper: float) -> "OptimizerState":
        state = cls(**hyper)
        for name, p in params.items():
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        return state


def adam_step(params: Params, grads: Mapping[str, Optional[np.ndarray]], state: OptimizerState) -> OptimizerState:
    """One bias-corrected Adam update, in place on params and moments."""
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state


# ----------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------
def predict(model: Model, images: np.ndarray) -> np.ndarray:
    """Argmax class per image; ties go to the lowest class index."""
    with no_grad():
        logits = model(images)
    return np.argmax(logits.data, axis=1)


def evaluate(model: Model, split: DatasetSplit, batch_size: int = 256) -> float:
    if len(split) == 0:
        return 0.0
    correct = 0
    for images, labels in batches(split, BatchPlan(batch_size=batch_size), shuffle=False):
        correct += int((predict(model, images) == labels).sum())
    return correct / len(split)


# ----------------------------------------------------------------------
# training loop
# ----------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class TrainData:
    train: DatasetSplit
    test: DatasetSplit


def _checkpoint(model: Model, state: OptimizerState, epoch: int, seed: int, history, config_text: str) -> Checkpoint:
    return Checkpoint(
        config_text=config_text,
        params=model.snapshot(),
        adam_m={k: v.copy() for k, v in state.m.items()},
        adam_v={k: v.copy() for k, v in state.v.items()},
        adam_step=state.t,
        epoch=epoch,
        seed=seed,
        history=list(history),
    )


def train(
    config: ModelConfig,
    dataset: TrainData,
    epochs: int,
    plan: BatchPlan,
    seed: int,
    *,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    adam_eps: float = 1e-8,
    config_text: str = "",
    checkpoint_path: Optional[Path] = None,
    resume: Optional[Checkpoint] = None,
    on_epoch: Optional[EpochCallback] = None,
) -> Checkpoint:
    """Run epochs [resume.epoch, epochs) of shuffled minibatch Adam.

    The checkpoint is rewritten after every epoch, so a divergence leaves the
    last good epoch on disk.
    """
    first_epoch = resume.epoch if resume is not None else 0
    if epochs > first_epoch and batch_count(len(dataset.train), plan) == 0:
        raise ConfigError(
            f"no training batches: {len(dataset.train)} examples with batch_size={plan.batch_size}"
            f"{' and drop_last' if plan.drop_last else ''}"
        )
    if resume is not None:
        model = Model.from_arrays(config, resume.params)
        state = OptimizerState(lr=lr, beta1=beta1, beta2=beta2, eps=adam_eps, t=resume.adam_step)
        state.m = {k: v.copy() for k, v in resume.adam_m.items()}
        state.v = {k: v.copy() for k, v in resume.adam_v.items()}
        history, start = list(resume.history), resume.epoch
    else:
        model = Model.create(config, Rng(seed).fork(INIT_STREAM))
        state = OptimizerState.for_params(model.params, lr=lr, beta1=beta1, beta2=beta2, eps=adam_eps)
        history, start = [], 0

    ckpt = _checkpoint(model, state, start, seed, history, config_text)
    if checkpoint_path is not None and start == 0:
        save_checkpoint(ckpt, checkpoint_path)

    for epoch in range(start, epochs):
        started = time.perf_counter()
        losses: list[float] = []
        batch_iter = tqdm(
            batches(dataset.train, plan, epoch),
            total=batch_count(len(dataset.train), plan),
            desc=f"epoch {epoch + 1}/{epochs}",
            disable=not settings.progress,
            leave=False,
        )
        for batch_index, (images, labels) in enumerate(batch_iter):
            try:
                loss = cross_entropy(model(images), labels)
                value = loss.item()
            except NonFiniteError:
                value = math.nan
            if not math.isfinite(value):
                raise TrainingDiverged(
                    f"non-finite loss {value} in epoch {epoch + 1} at batch {batch_index}",
                    details={"epoch": epoch + 1, "last_good_epoch": ckpt.epoch},
                    batch_index=batch_index,
                )
            for p in model.params.values():
                p.zero_grad()
            backward(loss)
            adam_step(model.params, {name: p.grad for name, p in model.params.items()}, state)
            losses.append(value)
            logger.debug("epoch %d batch %d loss %.6f", epoch + 1, batch_index, value)

        record = EpochRecord(
            epoch=epoch + 1,
            train_loss=float(np.mean(losses)),
            test_accuracy=evaluate(model, dataset.test),
        )
        history.append(record)
        ckpt = _checkpoint(model, state, epoch + 1, seed, history, config_text)
        if checkpoint_path is not None:
            save_checkpoint(ckpt, checkpoint_path)
        logger.info(
            "epoch %d/%d train_loss=%.6f test_accuracy=%.4f (%.1fs)",
            record.epoch,
            epochs,
            record.train_loss,
            record.test_accuracy,
            time.perf_counter() - started,
        )
        if on_epoch is not None:
            on_epoch(record)
    return ckpt


# ----------------------------------------------------------------------
# run-config entry points
# ----------------------------------------------------------------------
def model_config_for(run: RunConfig) -> ModelConfig:
    info = DATASETS[run.dataset]
    return build_variant(
        run.variant,
        (info.image_size, info.image_size, info.channels),
        num_classes=info.num_classes,
        embed_dim=run.embed_dim,
        layers_per_level=run.layers_per_level,
        heads=run.heads,
    )


def load_train_data(run: RunConfig) -> TrainData:
    return TrainData(
        train=load_dataset(run.dataset, run.data_dir, "train", run.train_limit),
        test=load_dataset(run.dataset, run.data_dir, "test", run.test_limit),
    )


def run_training(
    run: RunConfig,
    *,
    data: Optional[TrainData] = None,
    resume: Optional[Checkpoint] = None,
    on_epoch: Optional[EpochCallback] = None,
) -> Checkpoint:
    """Train per a resolved RunConfig; writes <out>/checkpoint.ghvt and <out>/metrics.jsonl."""
    config = model_config_for(run)
    data = data if data is not None else load_train_data(run)
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt = train(
        config,
        data,
        run.epochs,
        BatchPlan(batch_size=run.batch_size, seed=run.seed, drop_last=run.drop_last),
        run.seed,
        lr=run.learning_rate,
        beta1=run.beta1,
        beta2=run.beta2,
        adam_eps=run.adam_eps,
        config_text=run.to_text(),
        checkpoint_path=out / CHECKPOINT_NAME,
        resume=resume,
        on_epoch=on_epoch,
    )
    write_metrics(ckpt.history, out / METRICS_NAME)
    return ckpt


def model_from_checkpoint(ckpt: Checkpoint) -> tuple[RunConfig, Model]:
    run = RunConfig.from_text(ckpt.config_text, source="checkpoint config")
    return run, Model.from_arrays(model_config_for(run), ckpt.params)

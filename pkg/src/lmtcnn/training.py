"""Multi-task loss, SGD with momentum, the training loop, and evaluation metrics."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import EmptyIndexSet, LabelOutOfRange, ShapeMismatch
from .network import ModelParams, Prediction, backward, forward, predict_batch
from .ops import softmax
from .pipeline import DatasetManifest, Split, predict_oversampled, single_crop
from .tensor import Rng

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 1
    gender_loss_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.gender_loss_weight < 0:
            raise ValueError("gender_loss_weight must be >= 0")


@dataclass(frozen=True)
class EvalMetrics:
    age_top1: float
    age_top2: float
    age_1off: float
    gender_top1: float
    n: int

    def line(self) -> str:
        return (f"{self.age_top1:.6f},{self.age_top2:.6f},{self.age_1off:.6f},"
                f"{self.gender_top1:.6f},{self.n}")


@dataclass(frozen=True)
class EpochLog:
    epoch: int
    train_loss: float
    val: EvalMetrics | None

    def line(self) -> str:
        if self.val is None:
            return f"{self.epoch},{self.train_loss:.6f},nan,nan,nan"
        v = self.val
        return f"{self.epoch},{self.train_loss:.6f},{v.age_top1:.6f},{v.age_top2:.6f},{v.gender_top1:.6f}"


# -- loss ---------------------------------------------------------------------

def _cross_entropy(logits, labels):
    z = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(z).sum(axis=-1))
    return logz - z[np.arange(len(labels)), labels]


def multitask_loss_and_grads(age_logits, gender_logits, age_labels, gender_labels,
                             gender_weight: float = 1.0):
    """Mean over the batch of ``CE(age) + w * CE(gender)`` and its logit gradients."""
    age_logits = np.atleast_2d(age_logits)
    gender_logits = np.atleast_2d(gender_logits)
    age_labels = np.atleast_1d(np.asarray(age_labels, dtype=np.int64))
    gender_labels = np.atleast_1d(np.asarray(gender_labels, dtype=np.int64))
    b, na = age_logits.shape
    ng = gender_logits.shape[1]
    if gender_logits.shape[0] != b or len(age_labels) != b or len(gender_labels) != b:
        raise ShapeMismatch("batch sizes of logits and labels differ")
    if age_labels.min() < 0 or age_labels.max() >= na:
        raise LabelOutOfRange(f"age labels must lie in [0, {na})")
    if gender_labels.min() < 0 or gender_labels.max() >= ng:
        raise LabelOutOfRange(f"gender labels must lie in [0, {ng})")

    loss = _cross_entropy(age_logits, age_labels) + gender_weight * _cross_entropy(gender_logits, gender_labels)
    d_age = softmax(age_logits)
    d_age[np.arange(b), age_labels] -= 1
    d_gender = softmax(gender_logits)
    d_gender[np.arange(b), gender_labels] -= 1
    d_gender *= gender_weight
    return float(loss.mean()), d_age / b, d_gender / b


def multitask_loss(age_logits, gender_logits, age_label, gender_label, gender_weight: float = 1.0) -> float:
    return multitask_loss_and_grads(age_logits, gender_logits, age_label, gender_label, gender_weight)[0]


def loss_and_grads(params: ModelParams, images, age_labels, gender_labels,
                   gender_weight: float = 1.0, training: bool = False, rng: Rng | None = None):
    """End-to-end loss of a batch and gradients for every parameter tensor."""
    age, gender, cache = forward(params, images, training, rng, keep_cache=True)
    loss, d_age, d_gender = multitask_loss_and_grads(age, gender, age_labels, gender_labels, gender_weight)
    return loss, backward(params, cache, d_age, d_gender)


# -- optimizer ----------------------------------------------------------------

def sgd_step(tensors: dict, grads: dict, velocity: dict, cfg: TrainConfig):
    """``v <- momentum * v - lr * g``; ``p <- p + v``. Updates in place and returns both dicts."""
    if isinstance(tensors, ModelParams):
        tensors = tensors.tensors
    for name, p in tensors.items():
        g, v = grads[name], velocity[name]
        if g.shape != p.shape or v.shape != p.shape:
            raise ShapeMismatch(f"{name}: param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v *= cfg.momentum
        v -= cfg.learning_rate * g
        p += v
    return tensors, velocity


# -- data ---------------------------------------------------------------------

def preprocess(manifest: DatasetManifest, indices: Sequence[int], input_size: int) -> np.ndarray:
    return np.stack([single_crop(manifest.load_image(i), input_size) for i in indices]).astype(np.float32)


def labels_of(manifest: DatasetManifest, indices: Sequence[int]):
    recs = [manifest.records[i] for i in indices]
    return (np.array([r.age_class for r in recs], dtype=np.int64),
            np.array([r.gender_class for r in recs], dtype=np.int64))


# -- evaluation ---------------------------------------------------------------

def _rank_of(probs, label):
    # position of `label` in a stable descending sort; ties go to the lower index
    order = np.argsort(-np.asarray(probs), kind="stable")
    return int(np.nonzero(order == label)[0][0])


def score(preds: Sequence[Prediction], age_labels, gender_labels) -> EvalMetrics:
    if len(preds) == 0:
        raise EmptyIndexSet("nothing to score")
    n = len(preds)
    top1 = top2 = off1 = g1 = 0
    for p, a, g in zip(preds, age_labels, gender_labels):
        rank = _rank_of(p.age_probs, a)
        top1 += rank == 0
        top2 += rank <= 1
        off1 += abs(p.age_label - int(a)) <= 1
        g1 += p.gender_label == int(g)
    return EvalMetrics(top1 / n, top2 / n, off1 / n, g1 / n, n)


def evaluate(params: ModelParams, manifest: DatasetManifest, indices: Sequence[int],
             use_oversampling: bool = False, threads: int = 1, batch_size: int = 64) -> EvalMetrics:
    indices = list(indices)
    if not indices:
        raise EmptyIndexSet("evaluation needs at least one record")
    ages, genders = labels_of(manifest, indices)
    size = params.config.input_size
    if use_oversampling:
        def one(i):
            return predict_oversampled(params, manifest.load_image(i))
        if threads > 1:
            with ThreadPoolExecutor(threads) as pool:
                preds = list(pool.map(one, indices))
        else:
            preds = [one(i) for i in indices]
    else:
        preds = []
        for start in range(0, len(indices), batch_size):
            chunk = indices[start:start + batch_size]
            preds += predict_batch(params, preprocess(manifest, chunk, size))
    return score(preds, ages, genders)


# -- training loop ------------------------------------------------------------

def train(params: ModelParams, manifest: DatasetManifest, split: Split, cfg: TrainConfig,
          on_epoch=None):
    """Minibatch SGD over the split's training indices.

    Returns ``(params, logs)``; ``params`` is updated in place. The shuffle
    order and dropout masks come from one :class:`Rng` seeded with
    ``cfg.seed``, so a fixed seed reproduces the run exactly.
    """
    train_idx = list(split.train)
    if not train_idx:
        raise EmptyIndexSet("training split is empty")
    size = params.config.input_size
    x_all = preprocess(manifest, train_idx, size)
    age_all, gender_all = labels_of(manifest, train_idx)
    rng = Rng(cfg.seed)
    velocity = {k: np.zeros_like(v) for k, v in params.tensors.items()}
    logs = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_idx))
        total = 0.0
        for start in range(0, len(order), cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(params, x_all[b], age_all[b], gender_all[b],
                                         cfg.gender_loss_weight, training=True, rng=rng)
            if not math.isfinite(loss):
                raise FloatingPointError(f"loss diverged at epoch {epoch}")
            total += loss * len(b)
            sgd_step(params.tensors, grads, velocity, cfg)
        val = evaluate(params, manifest, split.validation) if split.validation else None
        entry = EpochLog(epoch, total / len(order), val)
        logs.append(entry)
        log.debug("epoch %s", entry.line())
        if on_epoch is not None:
            on_epoch(entry)
    return params, logs

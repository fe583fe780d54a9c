"""Mini-batch training loop and inference helpers."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .functional import softmax, softmax_cross_entropy
from .model import Model
from .optim import SGD, Adam

log = logging.getLogger(__name__)


class NumericalError(RuntimeError):
    def __init__(self, epoch: int, what: str):
        super().__init__(f"non-finite {what} at epoch {epoch}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 15
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    shuffle: bool = True
    normalize_inputs: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class FeatureSet:
    """Stacked model inputs (stream name -> (N, C, H, W)) with integer labels."""

    inputs: Dict[str, np.ndarray]
    labels: np.ndarray

    def __len__(self):
        return len(self.labels)

    def subset(self, idx) -> "FeatureSet":
        idx = np.asarray(idx)
        return FeatureSet({k: v[idx] for k, v in self.inputs.items()}, self.labels[idx])

    def select(self, streams: Sequence[str]) -> "FeatureSet":
        return FeatureSet({k: self.inputs[k] for k in streams}, self.labels)


@dataclass
class History:
    loss: List[float] = field(default_factory=list)
    accuracy: List[float] = field(default_factory=list)


def stack_samples(samples: Sequence[Mapping[str, np.ndarray]], labels: Sequence[int]) -> FeatureSet:
    """Stack per-sample (C, H, W) inputs, rejecting any shape drift by sample index."""
    if not samples:
        raise ValueError("empty sample list")
    ref = {k: np.shape(v) for k, v in samples[0].items()}
    for i, s in enumerate(samples):
        if set(s) != set(ref):
            raise ValueError(f"sample {i} has streams {sorted(s)}, expected {sorted(ref)}")
        for k, v in s.items():
            if np.shape(v) != ref[k]:
                raise ValueError(f"sample {i} stream {k!r} has shape {np.shape(v)}, expected {ref[k]}")
    inputs = {k: np.stack([s[k] for s in samples]).astype(np.float32) for k in ref}
    return FeatureSet(inputs, np.asarray(labels, dtype=np.int64))


def fit_normalization(model: Model, data: FeatureSet) -> None:
    for s in model.streams:
        x = data.inputs[s.name]
        s.norm_mean = float(np.mean(x, dtype=np.float64))
        s.norm_std = float(np.std(x, dtype=np.float64)) or 1.0


def _make_optimizer(model: Model, cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(model.parameters(), cfg.learning_rate)
    return Adam(model.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)


def train(model: Model, data: FeatureSet, cfg: TrainConfig, progress=None) -> Tuple[Model, History]:
    """Train in place. Shuffling is seeded from ``cfg.seed``; weights are whatever ``model`` holds."""
    if len(data) == 0:
        raise ValueError("empty training set")
    n = model.check_inputs(data.inputs)
    if cfg.normalize_inputs:
        fit_normalization(model, data)
    opt = _make_optimizer(model, cfg)
    rng = np.random.default_rng(cfg.seed)
    hist = History()
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total_loss, correct = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            batch = {k: v[idx] for k, v in data.inputs.items()}
            y = data.labels[idx]
            model.zero_grad()
            logits = model.forward(batch, train=True)
            loss, dlogits, probs = softmax_cross_entropy(logits, y)
            model.backward(dlogits)
            opt.step()
            total_loss += loss * len(idx)
            correct += int(np.sum(probs.argmax(axis=1) == y))
        mean_loss = total_loss / n
        if not np.isfinite(mean_loss):
            raise NumericalError(epoch, "loss")
        if not all(np.all(np.isfinite(p.data)) for p in model.parameters()):
            raise NumericalError(epoch, "parameter")
        hist.loss.append(mean_loss)
        hist.accuracy.append(correct / n)
        log.info("epoch %d loss %.4f acc %.4f", epoch, mean_loss, correct / n)
        if progress is not None:
            progress(epoch, mean_loss, correct / n)
    return model, hist


def predict(model: Model, sample: Mapping[str, np.ndarray]) -> Tuple[int, np.ndarray]:
    """Classify one sample given as stream name -> (C, H, W). Ties go to the lowest class index."""
    probs = model.predict_proba({k: np.asarray(v)[None] for k, v in sample.items()})[0]
    return int(np.argmax(probs)), probs


def predict_batch(model: Model, inputs: Mapping[str, np.ndarray], batch_size: int = 256):
    n = model.check_inputs(inputs)
    probs = []
    for start in range(0, n, batch_size):
        probs.append(model.predict_proba({k: v[start:start + batch_size] for k, v in inputs.items()}))
    p = np.concatenate(probs) if probs else np.zeros((0, model.n_classes), dtype=model.dtype)
    return p.argmax(axis=1), p


def evaluate(model: Model, data: FeatureSet) -> float:
    pred, _ = predict_batch(model, data.inputs)
    return float(np.mean(pred == data.labels))

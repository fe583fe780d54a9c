"""Seeded split -> train -> test procedure shared by the CLI, scripts and acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial
from typing import Callable, Optional, Tuple

from .evalkit import ConfusionMatrix, RunStats, confusion, multi_run, stratified_split
from .models import build_model
from .nn.model import Model
from .nn.train import FeatureSet, History, TrainConfig, predict_batch, train


@dataclass
class TrialResult:
    accuracy: float
    confusion: ConfusionMatrix
    model: Model
    history: History
    n_train: int
    n_test: int


def train_and_test(features: FeatureSet, arch: str, seed: int = 0, epochs: int = 15,
                   train_fraction: float = 0.8, batch_size: int = 32, learning_rate: float = 1e-3,
                   progress: Optional[Callable] = None) -> TrialResult:
    """One run: ``seed`` drives both the stratified split and the weight initialisation."""
    tr, te = stratified_split(features.labels, train_fraction, seed)
    model = build_model(arch, seed=seed)
    streams = model.stream_names
    cfg = TrainConfig(epochs=epochs, batch_size=batch_size, learning_rate=learning_rate, seed=seed)
    model, hist = train(model, features.subset(tr).select(streams), cfg, progress=progress)
    test = features.subset(te).select(streams)
    preds, _ = predict_batch(model, test.inputs)
    cm = confusion(preds, test.labels)
    return TrialResult(float((preds == test.labels).mean()), cm, model, hist, len(tr), len(te))


def _trial(features, arch, epochs, train_fraction, seed) -> Tuple[float, ConfusionMatrix]:
    r = train_and_test(features, arch, seed, epochs, train_fraction)
    return r.accuracy, r.confusion


def evaluate_arch(features: FeatureSet, arch: str, runs: int = 5, seed: int = 0, epochs: int = 15,
                  train_fraction: float = 0.8, jobs: int = 1) -> RunStats:
    return multi_run(partial(_trial, features, arch, epochs, train_fraction), runs, seed, jobs)

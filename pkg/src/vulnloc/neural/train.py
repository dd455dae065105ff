"""Minibatch training with Adamax, plus a k-fold selection harness."""

import logging
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..errors import DataError, TrainingError
from ..rng import stream
from .model import Model, ModelConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 0.002
    epochs: int = 10
    seed: int = 0
    folds: int = 5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-7

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


class Adamax:
    def __init__(self, params: Dict[str, np.ndarray], lr, beta1=0.9, beta2=0.999, eps=1e-7):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.u = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        scale = self.lr / (1.0 - self.beta1 ** self.t)
        for k in sorted(params):
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.u[k] = np.maximum(self.beta2 * self.u[k], np.abs(g))
            params[k] -= scale * self.m[k] / (self.u[k] + self.eps)


def stack(samples):
    X = np.stack([s.matrix for s in samples])
    M = np.stack([s.mask for s in samples])
    y = np.array([1.0 if s.label else 0.0 for s in samples])
    return X, M, y


def train(samples: Sequence, model_cfg: ModelConfig, cfg: TrainConfig, history: Optional[List[float]] = None) -> Model:
    """Fit a fresh model; `history` receives the mean training loss of each epoch."""
    if not samples:
        raise DataError("cannot train on an empty dataset")
    labels = {bool(s.label) for s in samples}
    if len(labels) < 2:
        logger.warning("training set has a single class")
    model = Model.create(model_cfg, stream(cfg.seed, "init"))
    drop_rng = stream(cfg.seed, "dropout")
    shuffle_rng = stream(cfg.seed, "shuffle")
    opt = Adamax(model.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    X, M, y = stack(samples)
    n = len(samples)
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            loss, grads = model.loss_and_grads(X[idx], M[idx], y[idx], drop_rng)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss in epoch {epoch + 1}, batch {b}")
            opt.step(model.params, grads)
            total += loss * len(idx)
        mean = total / n
        if history is not None:
            history.append(mean)
        logger.info("epoch %d/%d loss %.6f", epoch + 1, cfg.epochs, mean)
    return model


def kfold_indices(n, folds, rng):
    order = rng.permutation(n)
    return [np.sort(order[i::folds]) for i in range(folds)]


def cross_validate(samples, model_cfg: ModelConfig, cfg: TrainConfig, grid: Sequence[dict], threshold=0.5):
    """Pick the grid entry with the best fold-averaged F1; returns (best_entry, scores)."""
    from ..evaluation import ConfusionCounts, detection_metrics
    from .detect import detect

    folds = kfold_indices(len(samples), cfg.folds, stream(cfg.seed, "split"))
    scores = []
    for entry in grid:
        mc = replace(model_cfg, **{k: v for k, v in entry.items() if hasattr(model_cfg, k)})
        tc = replace(cfg, **{k: v for k, v in entry.items() if hasattr(cfg, k)})
        f1s = []
        for k, held in enumerate(folds):
            held_set = set(held.tolist())
            tr = [s for i, s in enumerate(samples) if i not in held_set]
            te = [samples[i] for i in held]
            model = train(tr, mc, tc)
            counts = ConfusionCounts()
            for s in te:
                counts.add(bool(s.label), detect(model, s, threshold).vulnerable)
            f1 = detection_metrics(counts)["F1"]
            f1s.append(0.0 if f1 is None else f1)
        scores.append(float(np.mean(f1s)))
        logger.info("grid %s: mean F1 %.4f", entry, scores[-1])
    best = int(np.argmax(scores))
    return grid[best], scores

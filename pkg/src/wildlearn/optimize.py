"""Minibatch SGD training loops.

Two entry points: plain empirical risk minimization on labeled ID data, and
the joint objective that adds annotated covariate samples to the
cross-entropy term and trains the detector head to separate ID from annotated
semantic samples through a smooth level-set penalty weighted by alpha.
Everything is deterministic given the config seed.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np

from .data import BOTTOM, Dataset, concat_datasets
from .errors import ValidationError
from . import nnet
from .nnet import Architecture


@dataclass(frozen=True)
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 0.0005
    lr_schedule: str = "constant"  # "constant" | "cosine"
    alpha: float = 10.0
    seed: int = 0

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValidationError("learning rate must be >= 0")
        if not (0.0 <= self.momentum < 1.0):
            raise ValidationError("momentum must lie in [0, 1)")
        if self.weight_decay < 0 or self.alpha < 0:
            raise ValidationError("weight_decay and alpha must be >= 0")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValidationError(f"unknown lr schedule {self.lr_schedule!r}")

    def to_json_dict(self) -> dict:
        return {
            "epochs": self.epochs, "batch_size": self.batch_size,
            "learning_rate": self.learning_rate, "momentum": self.momentum,
            "weight_decay": self.weight_decay, "lr_schedule": self.lr_schedule,
            "alpha": self.alpha, "seed": self.seed,
        }


@dataclass
class EpochStats:
    epoch: int
    ce_loss: float
    detector_loss: float
    total_loss: float


@dataclass
class TrainResult:
    params: np.ndarray
    history: list[EpochStats]


class _BatchStream:
    """Cycles through a dataset in shuffled minibatches; reshuffles on wrap."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self.order = rng.permutation(n)
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.pos + self.batch_size > self.n:
            self.order = self.rng.permutation(self.n)
            self.pos = 0
        out = self.order[self.pos: self.pos + self.batch_size]
        self.pos += self.batch_size
        return out


def _lr_at(cfg: TrainConfig, epoch: int) -> float:
    if cfg.lr_schedule == "constant":
        return cfg.learning_rate
    return cfg.learning_rate * 0.5 * (1.0 + np.cos(np.pi * epoch / cfg.epochs))


def _run_sgd(arch: Architecture, params0: np.ndarray, class_set: Dataset,
             det_id: Dataset | None, det_sem: Dataset | None, cfg: TrainConfig,
             on_step=None) -> TrainResult:
    """Shared SGD loop. The detector terms are skipped entirely when alpha is 0
    or the corresponding set is absent, which keeps the RNG stream identical to
    a pure classification run."""
    params = params0.astype(np.float64).copy()
    velocity = np.zeros_like(params)
    rng = np.random.default_rng(cfg.seed)
    n = class_set.n
    use_det_id = cfg.alpha > 0 and det_id is not None and det_id.n > 0
    use_det_sem = cfg.alpha > 0 and det_sem is not None and det_sem.n > 0
    det_id_stream = _BatchStream(det_id.n, cfg.batch_size, rng) if use_det_id else None
    det_sem_stream = _BatchStream(det_sem.n, cfg.batch_size, rng) if use_det_sem else None
    X = class_set.features.astype(np.float64)
    Y = class_set.class_labels
    history: list[EpochStats] = []
    steps_per_epoch = max(1, n // min(cfg.batch_size, n))
    step = 0
    for epoch in range(cfg.epochs):
        lr = _lr_at(cfg, epoch)
        order = rng.permutation(n)
        ce_sum = det_sum = 0.0
        for b in range(steps_per_epoch):
            idx = order[b * cfg.batch_size: (b + 1) * cfg.batch_size]
            if idx.size == 0:
                idx = order[:min(cfg.batch_size, n)]
            ce_loss, grad = nnet.ce_mean_and_grad(params, arch, X[idx], Y[idx])
            det_loss = 0.0
            if use_det_id:
                bidx = det_id_stream.next()
                l_id, g_id = nnet.detector_mean_and_grad(
                    params, arch, det_id.features[bidx].astype(np.float64), nnet.ID_POSITIVE)
                grad = grad + cfg.alpha * g_id
                det_loss += l_id
            if use_det_sem:
                bidx = det_sem_stream.next()
                l_sem, g_sem = nnet.detector_mean_and_grad(
                    params, arch, det_sem.features[bidx].astype(np.float64), nnet.OOD_NEGATIVE)
                grad = grad + cfg.alpha * g_sem
                det_loss += l_sem
            if cfg.weight_decay > 0:
                grad = grad + cfg.weight_decay * params
            if on_step is not None:
                on_step(step, grad.copy())
            velocity = cfg.momentum * velocity + grad
            params = params - lr * velocity
            ce_sum += ce_loss
            det_sum += det_loss
            step += 1
        ce_mean = ce_sum / steps_per_epoch
        det_mean = det_sum / steps_per_epoch
        history.append(EpochStats(epoch, ce_mean, det_mean, ce_mean + cfg.alpha * det_mean))
    return TrainResult(params, history)


def train_erm(arch: Architecture, id_train: Dataset, cfg: TrainConfig,
              on_step=None) -> TrainResult:
    """Minimize mean cross-entropy on the labeled ID set with SGD + momentum.

    The detector head receives no gradient and keeps its seeded init.
    """
    cfg.validate()
    if id_train.n == 0:
        raise ValidationError("cannot train on an empty dataset")
    if np.any(id_train.class_labels < 0):
        raise ValidationError("ERM needs fully class-labeled data")
    params0 = nnet.init_params(arch, cfg.seed)
    return _run_sgd(arch, params0, id_train, None, None, cfg, on_step=on_step)


def train_joint(arch: Architecture, init: np.ndarray, id_train: Dataset,
                cov_selected: Dataset, sem_selected: Dataset, cfg: TrainConfig,
                on_step=None) -> TrainResult:
    """Joint objective from annotated wild samples, warm-started from `init`.

    Cross-entropy averages uniformly over id_train plus the annotated in-class
    samples; the detector penalty (weight alpha) pushes ID scores positive and
    annotated semantic scores negative.
    """
    cfg.validate()
    if id_train.n == 0:
        raise ValidationError("cannot train on an empty dataset")
    if cov_selected.n > 0 and np.any(cov_selected.class_labels < 0):
        raise ValidationError("annotated in-class samples must carry class labels")
    if sem_selected.n > 0 and np.any(sem_selected.class_labels != BOTTOM):
        raise ValidationError("annotated semantic samples must be labeled BOTTOM")
    if sem_selected.n == 0:
        warnings.warn("no annotated semantic samples: detector trains on the ID side only",
                      stacklevel=2)
    class_set = id_train if cov_selected.n == 0 else concat_datasets([id_train, cov_selected])
    return _run_sgd(arch, np.asarray(init, dtype=np.float64), class_set,
                    id_train, sem_selected, cfg, on_step=on_step)


def write_epoch_log(path, history: list[EpochStats]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "ce_loss", "detector_loss", "total"])
        for row in history:
            w.writerow([row.epoch, repr(row.ce_loss), repr(row.detector_loss),
                        repr(row.total_loss)])

"""Training loop, evaluation, and seeded random streams."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .data import TabularDataset, stratified_batches
from .losses import focal_loss
from .metrics import EvalReport, EvaluationError, report_from_logits
from .optim import PlateauScheduler, make_optimizer
from .tensor import Tape

STREAMS = {"split": 0, "batches": 1, "init": 2, "missing": 3, "dropout": 4}
HISTORY_FIELDS = ("epoch", "loss", "acc", "f1", "sens", "spec", "ba", "lr")


def stream_rng(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named purpose under a run seed."""
    return np.random.default_rng([int(seed), STREAMS[name]])


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 2e-4
    batch_size: int = 64
    focal_alpha: float = 0.8
    focal_gamma: float = 2.0
    optimizer: str = "adam"
    weight_decay: float | None = None
    plateau_patience: int = 10
    plateau_factor: float = 0.1
    threshold: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 < self.focal_alpha < 1.0:
            raise ValueError("focal_alpha must lie in (0, 1)")
        if self.focal_gamma < 0:
            raise ValueError("focal_gamma must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.optimizer not in ("adam", "rmsprop"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    report: EvalReport
    lr: float


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1

    @property
    def best(self) -> EpochRecord:
        return self.epochs[self.best_epoch]

    def rows(self) -> list[list[str]]:
        out = []
        for r in self.epochs:
            rep = r.report
            out.append([str(r.epoch)] + [repr(float(v)) for v in (
                r.loss, rep.accuracy, rep.f1, rep.sensitivity, rep.specificity,
                rep.balanced_accuracy, r.lr)])
        return out

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_FIELDS)
            w.writerows(self.rows())


def predict_logits(model, dataset: TabularDataset, prepared: bool = False,
                   chunk: int = 512) -> np.ndarray:
    ds = dataset if prepared else model.prepare(dataset)
    n = len(ds)
    out = [model.forward(ds.take(np.arange(s, min(s + chunk, n)))).data for s in range(0, n, chunk)]
    return np.concatenate(out) if out else np.zeros(0)


def evaluate(model, dataset: TabularDataset, threshold: float = 0.5,
             prepared: bool = False) -> EvalReport:
    if len(dataset) == 0:
        raise EvaluationError("cannot evaluate an empty dataset")
    return report_from_logits(predict_logits(model, dataset, prepared), dataset.labels, threshold)


def _snapshot(model) -> dict[str, np.ndarray]:
    return {k: t.data.copy() for k, t in model.parameters().items()}


def load_state(model, state: dict[str, np.ndarray]) -> None:
    params = model.parameters()
    for k, arr in state.items():
        params[k].data[...] = arr


def train(model, train_set: TabularDataset, val_set: TabularDataset, config: TrainConfig,
          callback: Callable | None = None):
    """Fit ``model`` with focal loss on stratified batches.

    Validation F1 picks the best epoch (earliest on ties) and balanced
    accuracy drives the plateau scheduler. The model ends holding the best
    epoch's parameters. ``callback(epoch, batch_index, model)`` runs after
    every optimizer step. Returns ``(history, best_state)``.
    """
    model.fit_preprocessing(train_set)
    tr = model.prepare(train_set)
    va = model.prepare(val_set)
    params = model.parameters()
    opt = make_optimizer(config.optimizer, params, config.learning_rate, config.weight_decay)
    sched = PlateauScheduler(config.learning_rate, config.plateau_patience, config.plateau_factor)
    batch_rng = stream_rng(config.seed, "batches")
    drop_rng = stream_rng(config.seed, "dropout")
    constrained = hasattr(model, "project")

    history = TrainHistory()
    best_f1 = -1.0
    best_state = _snapshot(model)
    for epoch in range(config.epochs):
        lr = opt.lr
        losses = []
        for bi, idx in enumerate(stratified_batches(tr, config.batch_size, batch_rng)):
            batch = tr.take(idx)
            with Tape() as tape:
                logits = model.forward(batch, rng=drop_rng)
                loss = focal_loss(logits, batch.labels, config.focal_alpha, config.focal_gamma)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {bi} (tensor 'loss')")
            tape.backward(loss)
            for name, p in params.items():
                if p.grad is not None and not np.all(np.isfinite(p.grad)):
                    raise TrainingError(
                        f"non-finite gradient at epoch {epoch}, batch {bi} (tensor {name!r})")
            opt.step()
            opt.zero_grad()
            if constrained:
                model.project()
            for name, p in params.items():
                if not np.all(np.isfinite(p.data)):
                    raise TrainingError(
                        f"non-finite parameter at epoch {epoch}, batch {bi} (tensor {name!r})")
            losses.append(value)
            if callback is not None:
                callback(epoch, bi, model)
        report = evaluate(model, va, config.threshold, prepared=True)
        history.epochs.append(EpochRecord(epoch, float(np.mean(losses)), report, lr))
        if report.f1 > best_f1:
            best_f1 = report.f1
            history.best_epoch = epoch
            best_state = _snapshot(model)
        opt.lr = sched.step(report.balanced_accuracy)
    load_state(model, best_state)
    return history, best_state


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)

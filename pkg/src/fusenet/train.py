"""Training loop, evaluation and probability-averaging ensembles."""
from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import layers as L
from . import optim
from .checkpoint import Checkpoint
from .data import WindowedDataset
from .errors import NumericError, ShapeError, UsageError
from .metrics import ConfusionMatrix, MetricsReport, confusion, report
from .model import PerceptionNet

log = logging.getLogger(__name__)

ERROR_TOL = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    max_epochs: int = 2000
    patience: int = 100
    seed: int = 0
    shuffle: bool = True
    # what stops training and what selects the saved checkpoint
    monitor_stop: str = "train_accuracy"
    monitor_checkpoint: str = "val_error"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.max_epochs < 0 or self.patience < 0:
            raise ValueError("max_epochs and patience must be non-negative")
        if self.patience > self.max_epochs:
            raise ValueError(f"patience {self.patience} exceeds max_epochs {self.max_epochs}")
        if self.monitor_stop not in ("train_accuracy", "val_accuracy"):
            raise ValueError(f"unknown stop monitor {self.monitor_stop!r}")
        if self.monitor_checkpoint not in ("val_error", "train_error"):
            raise ValueError(f"unknown checkpoint monitor {self.monitor_checkpoint!r}")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_accuracy: float
    val_error: float
    wall_time: float = field(default=0.0, compare=False)


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    FIELDS = ("epoch", "train_loss", "train_accuracy", "val_accuracy", "val_error", "wall_time")

    def append(self, rec: EpochRecord):
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise UsageError("epoch indices must increase")
        self.records.append(rec)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.FIELDS)
            for r in self.records:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.train_accuracy),
                            repr(r.val_accuracy), repr(r.val_error), f"{r.wall_time:.3f}"])

    @classmethod
    def from_csv(cls, path) -> "TrainLog":
        out = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                out.append(EpochRecord(int(row["epoch"]), float(row["train_loss"]),
                                       float(row["train_accuracy"]), float(row["val_accuracy"]),
                                       float(row["val_error"]), float(row["wall_time"])))
        return out


class Patience:
    """Stops once the monitored value has not strictly increased for ``patience`` epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -np.inf
        self.stale = 0

    def update(self, value: float) -> bool:
        if value > self.best:
            self.best = value
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience


def one_hot(y: np.ndarray, k: int, dtype) -> np.ndarray:
    out = np.zeros((len(y), k), dtype=dtype)
    out[np.arange(len(y)), y] = 1
    return out


def _check_compatible(net: PerceptionNet, ds: WindowedDataset):
    cfg = net.config
    if ds.x.shape[1:] != (1, cfg.input_height, cfg.input_width):
        raise ShapeError(f"dataset windows {ds.x.shape[1:]} do not fit model input "
                         f"(1, {cfg.input_height}, {cfg.input_width})")
    if ds.num_classes != cfg.num_classes:
        raise ShapeError(f"dataset has {ds.num_classes} classes, model {cfg.num_classes}")


def predict(net: PerceptionNet, x: np.ndarray, batch_size: int = 512) -> np.ndarray:
    return net.predict_proba(x, batch_size).argmax(axis=1)


def train(net: PerceptionNet, train_ds: WindowedDataset, val_ds: WindowedDataset,
          cfg: TrainConfig, state: optim.AdadeltaState | None = None,
          on_epoch=None) -> tuple[Checkpoint, TrainLog]:
    """Train ``net`` in place with Adadelta on mean cross-entropy.

    After each epoch the validation error is measured in eval mode; the
    returned checkpoint is the epoch with the lowest validation error.
    Training halts when training accuracy (measured on the epoch's
    train-mode predictions) has not strictly improved for ``cfg.patience``
    epochs, or after ``cfg.max_epochs``.
    """
    _check_compatible(net, train_ds)
    _check_compatible(net, val_ds)
    params = net.parameters()
    state = state or optim.state_init(params)
    shuffle_rng = np.random.default_rng([cfg.seed, 0])
    dropout_rng = np.random.default_rng([cfg.seed, 1])
    k = net.config.num_classes
    x_all = np.ascontiguousarray(train_ds.x, dtype=net.dtype)
    y_all = train_ds.y
    n = len(y_all)

    trainlog = TrainLog()
    stopper = Patience(cfg.patience)
    best: Checkpoint | None = None
    best_err = np.inf
    stats = train_ds.channel_stats

    def snapshot(epoch, err):
        return Checkpoint.from_model(net, optimizer=state, channel_stats=stats, epoch=epoch,
                                     val_error=err, seed=cfg.seed)

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(n) if cfg.shuffle else np.arange(n)
        loss_sum, correct = 0.0, 0
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            logits, caches = net.forward(x_all[idx], mode="train", rng=dropout_rng)
            try:
                loss, probs, grad = L.softmax_xent(logits, one_hot(y_all[idx], k, net.dtype))
            except NumericError:
                raise NumericError(f"non-finite logits at epoch {epoch}, batch {b}") from None
            if not np.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {b}")
            grads = net.backward(grad, caches)
            optim.step(params, grads, state)
            loss_sum += loss * len(idx)
            correct += int((probs.argmax(axis=1) == y_all[idx]).sum())

        train_acc = correct / n
        val_acc = float((predict(net, val_ds.x) == val_ds.y).mean()) if len(val_ds) else 0.0
        val_err = 1.0 - val_acc
        rec = EpochRecord(epoch, loss_sum / n, train_acc, val_acc, val_err,
                          time.perf_counter() - t0)
        trainlog.append(rec)
        log.info("epoch %d loss %.5f train_acc %.4f val_acc %.4f", epoch, rec.train_loss,
                 train_acc, val_acc)

        monitored_err = val_err if cfg.monitor_checkpoint == "val_error" else 1.0 - train_acc
        if best is None or monitored_err < best_err - ERROR_TOL:
            best_err = monitored_err
            best = snapshot(epoch, val_err)
        if on_epoch is not None:
            on_epoch(rec)
        monitored = train_acc if cfg.monitor_stop == "train_accuracy" else val_acc
        if stopper.update(monitored):
            log.info("stopping after epoch %d: no improvement for %d epochs", epoch, cfg.patience)
            break

    if best is None:
        # max_epochs == 0: hand back the untrained network
        err = 1.0 - float((predict(net, val_ds.x) == val_ds.y).mean()) if len(val_ds) else 1.0
        best = snapshot(0, err)
    return best, trainlog


@dataclass
class Evaluation:
    report: MetricsReport
    confusion: ConfusionMatrix
    per_subject: dict[int, tuple[int, int]]  # subject -> (correct, total)

    def subject_accuracy(self) -> dict[int, float]:
        return {s: c / t for s, (c, t) in self.per_subject.items()}


def evaluate_predictions(y_pred: np.ndarray, ds: WindowedDataset) -> Evaluation:
    cm = confusion(ds.y, y_pred, ds.num_classes)
    per_subject = {}
    for s in np.unique(ds.subjects):
        m = ds.subjects == s
        per_subject[int(s)] = (int((y_pred[m] == ds.y[m]).sum()), int(m.sum()))
    return Evaluation(report(cm), cm, per_subject)


def evaluate(ckpt: Checkpoint | PerceptionNet, ds: WindowedDataset) -> Evaluation:
    net = ckpt.build_model() if isinstance(ckpt, Checkpoint) else ckpt
    _check_compatible(net, ds)
    return evaluate_predictions(predict(net, ds.x), ds)


def ensemble_proba(checkpoints: list[Checkpoint], ds: WindowedDataset, jobs: int = 1) -> np.ndarray:
    """Mean of the member models' class-probability vectors."""
    if not checkpoints:
        raise UsageError("ensemble needs at least one checkpoint")
    first = checkpoints[0].config
    for c in checkpoints[1:]:
        if c.config != first:
            raise UsageError("all ensemble members must share one model config")

    def member(ckpt):
        net = ckpt.build_model()
        _check_compatible(net, ds)
        return net.predict_proba(ds.x).astype(np.float64)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            probs = list(pool.map(member, checkpoints))
    else:
        probs = [member(c) for c in checkpoints]
    total = np.zeros_like(probs[0])
    for p in probs:  # fixed order keeps the sum deterministic
        total += p
    return total / len(probs)


def ensemble_predict(checkpoints: list[Checkpoint], ds: WindowedDataset, jobs: int = 1) -> np.ndarray:
    # argmax breaks ties towards the lowest class index
    return ensemble_proba(checkpoints, ds, jobs).argmax(axis=1)


def save_log(trainlog: TrainLog, path) -> Path:
    path = Path(path)
    trainlog.to_csv(path)
    return path

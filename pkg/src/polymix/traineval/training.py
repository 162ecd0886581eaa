"""Stratified folds and the epoch loop with decay, plateau and early stopping."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..dataset import FeatureStore
from ..errors import ContractError, StratificationError
from ..nn.layers import BatchNorm, Dropout
from ..nn.loss import bce_loss
from ..nn.model import Model
from ..nn.optim import AdamState, adam_step, scheduled_lr
from .metrics import lrap

log = logging.getLogger(__name__)


def make_folds(labels, k: int = 5, seed: int = 0) -> np.ndarray:
    """Fold index per sample, stratified by label vector.

    Samples of each label vector are shuffled with a seeded generator and
    dealt round-robin; the dealing position carries over between groups so
    fold totals stay balanced too.
    """
    if isinstance(labels, FeatureStore):
        labels = labels.labels
    labels = np.asarray(labels)
    if k < 2:
        raise ContractError(f"need at least 2 folds, got {k}")
    keys = [row.tobytes() for row in labels.astype(np.uint8)]
    groups = {}
    for i, key in enumerate(keys):
        groups.setdefault(key, []).append(i)
    rng = np.random.default_rng(seed)
    folds = np.empty(len(labels), dtype=np.int64)
    pos = 0
    for key in sorted(groups):
        members = np.asarray(groups[key])
        if len(members) < k:
            raise StratificationError(f"label vector {list(key)} has {len(members)} samples, "
                                      f"fewer than {k} folds")
        members = members[rng.permutation(len(members))]
        folds[members] = (pos + np.arange(len(members))) % k
        pos = (pos + len(members)) % k
    return folds


@dataclass
class Schedule:
    batch_size: int = 128
    base_lr: float = 1e-4
    epoch_decay: float = 0.9
    max_epochs: int = 100
    plateau_patience: int = 5
    plateau_factor: float = 0.5
    stop_patience: int = 7
    min_delta: float = 1e-4
    seed: int = 0
    refresh_bn_stats: bool = False

    def to_json(self) -> dict:
        return asdict(self)


class PlateauMonitor:
    """Tracks validation loss and decides on LR reductions and stopping.

    Both counters count consecutive epochs without an improvement larger
    than ``min_delta``; the plateau counter restarts after every reduction.
    """

    def __init__(self, schedule: Schedule):
        self.schedule = schedule
        self.best = np.inf
        self.best_epoch = -1
        self.since_best = 0
        self.since_reduce = 0
        self.factor = 1.0

    def update(self, epoch: int, loss: float) -> list[str]:
        s = self.schedule
        events = []
        if loss < self.best - s.min_delta:
            self.best, self.best_epoch = loss, epoch
            self.since_best = self.since_reduce = 0
            events.append("improved")
            return events
        self.since_best += 1
        self.since_reduce += 1
        if self.since_reduce >= s.plateau_patience:
            self.factor *= s.plateau_factor
            self.since_reduce = 0
            events.append("lr_reduced")
        if self.since_best >= s.stop_patience:
            events.append("stop")
        return events


def simulate_schedule(losses, schedule: Schedule | None = None) -> list[dict]:
    """Replay a scripted validation-loss sequence through the schedule logic."""
    schedule = schedule or Schedule()
    monitor = PlateauMonitor(schedule)
    out = []
    for epoch, loss in enumerate(losses):
        lr = scheduled_lr(schedule.base_lr, epoch, monitor.factor, schedule.epoch_decay)
        events = monitor.update(epoch, float(loss))
        out.append({"epoch": epoch, "lr": lr, "val_loss": float(loss), "events": events,
                    "best_epoch": monitor.best_epoch})
        if "stop" in events:
            break
    return out


def _mean_loss(model: Model, store: FeatureStore, batch_size: int) -> float:
    total = 0.0
    for i in range(0, store.count, batch_size):
        scores = model.forward(store.features[i:i + batch_size], train=False)
        loss, _ = bce_loss(scores, store.labels[i:i + batch_size])
        total += loss * len(scores)
    return total / store.count


def train_epoch(model: Model, store: FeatureStore, adam: AdamState, lr: float,
                batch_size: int, rng: np.random.Generator) -> float:
    order = rng.permutation(store.count)
    total = 0.0
    for i in range(0, store.count, batch_size):
        idx = np.sort(order[i:i + batch_size])
        x, y = store.features[idx], store.labels[idx]
        scores = model.forward(x, train=True)
        loss, _ = bce_loss(scores, y)
        # sigmoid and BCE fused: dL/dlogit = (s - t) / (B * C)
        model.backward((scores - y) / scores.size)
        adam_step(adam, model.parameters(), model.gradients(), lr)
        total += loss * len(idx)
    return total / store.count


def refresh_bn_stats(model: Model, store: FeatureStore, batch_size: int = 128) -> None:
    """Replace BatchNorm running statistics with averages over ``store``.

    Running statistics gathered during training see activations scaled by
    dropout masks; at inference dropout is off, so the variances no longer
    match. This pass recomputes them with dropout disabled, averaging the
    per-batch statistics uniformly over one ordered sweep.
    """
    if store.count == 0:
        raise ContractError("empty store")
    norms = [layer for layer in model.layers if isinstance(layer, BatchNorm)]
    drops = [layer for layer in model.layers if isinstance(layer, Dropout)]
    saved = ([n.momentum for n in norms], [d.rate for d in drops])
    try:
        for d in drops:
            d.rate = 0.0
        for t, i in enumerate(range(0, store.count, batch_size)):
            for n in norms:
                n.momentum = t / (t + 1.0)
            model.forward(store.features[i:i + batch_size], train=True)
    finally:
        for n, m in zip(norms, saved[0]):
            n.momentum = m
        for d, r in zip(drops, saved[1]):
            d.rate = r
        for layer in model.layers:
            layer._cache = None


def fit(model: Model, train: FeatureStore, val: FeatureStore | None,
        schedule: Schedule | None = None, stream: str = "") -> list[dict]:
    """Train in place; restores the best-validation weights before returning.

    Without a validation set the training loss drives the schedule. With
    ``schedule.refresh_bn_stats`` the restored model's BatchNorm statistics
    are recomputed on ``train`` with dropout off (see ``refresh_bn_stats``).
    """
    schedule = schedule or Schedule()
    if train.count == 0:
        raise ContractError("empty training partition")
    rng = np.random.default_rng([schedule.seed, 7])
    model.set_rng(np.random.default_rng([schedule.seed, 11]))
    adam = AdamState(base_lr=schedule.base_lr)
    monitor = PlateauMonitor(schedule)
    best_state = model.state()
    history = []
    for epoch in range(schedule.max_epochs):
        lr = scheduled_lr(schedule.base_lr, epoch, monitor.factor, schedule.epoch_decay)
        train_loss = train_epoch(model, train, adam, lr, schedule.batch_size, rng)
        val_loss = (_mean_loss(model, val, schedule.batch_size)
                    if val is not None and val.count else train_loss)
        events = monitor.update(epoch, val_loss)
        if "improved" in events:
            best_state = model.state()
        record = {"epoch": epoch, "lr": lr, "train_loss": train_loss, "val_loss": val_loss,
                  "events": events}
        history.append(record)
        log.info("%sepoch %d lr=%.3g train=%.4f val=%.4f %s", stream, epoch, lr, train_loss,
                 val_loss, " ".join(e for e in events if e != "improved"))
        if "lr_reduced" in events:
            log.info("%sLR plateau factor now %g", stream, monitor.factor)
        if "stop" in events:
            log.info("%searly stop at epoch %d, best epoch %d", stream, epoch, monitor.best_epoch)
            break
    model.load_state(best_state)
    if schedule.refresh_bn_stats:
        refresh_bn_stats(model, train, schedule.batch_size)
        log.info("%sBatchNorm statistics refreshed on %d training examples", stream, train.count)
    history.append({"best_epoch": monitor.best_epoch, "best_val_loss": monitor.best})
    return history


def train_fold(model: Model, store: FeatureStore, folds, val_fold: int,
               schedule: Schedule | None = None, extra: FeatureStore | None = None):
    """Train on every fold but ``val_fold`` (plus ``extra``), validate on ``val_fold``.

    ``extra`` holds augmentation examples that only ever join the training
    side. Returns ``(model, history)``.
    """
    folds = np.asarray(folds)
    if not 0 <= val_fold <= int(folds.max(initial=0)):
        raise ContractError(f"val_fold {val_fold} outside 0..{int(folds.max(initial=0))}")
    train = store.subset(np.flatnonzero(folds != val_fold))
    val = store.subset(np.flatnonzero(folds == val_fold))
    if extra is not None and extra.count:
        train = train.concat(extra)
    history = fit(model, train, val, schedule, stream=f"[fold {val_fold}] ")
    return model, history


def training_lrap(model: Model, store: FeatureStore, batch_size: int = 128) -> float:
    return lrap(model.predict(store.features, batch_size), store.labels)

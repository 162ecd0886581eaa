"""Multi-label ranking and classification metrics.

LRAP and AUC are accumulated as exact fractions from integer counts, so the
returned floats are the correctly rounded values of the true ratios.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.stats import rankdata

from ..dataset import INSTRUMENTS
from ..errors import ContractError

log = logging.getLogger(__name__)


@dataclass
class PredictionMatrix:
    scores: np.ndarray   # (n, C) in [0, 1]
    labels: np.ndarray   # (n, C) binary

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.scores.ndim != 2 or self.scores.shape != self.labels.shape:
            raise ContractError(f"scores {self.scores.shape} and labels {self.labels.shape} differ")
        if np.any(self.labels > 1):
            raise ContractError("labels must be binary")

    @property
    def n(self) -> int:
        return len(self.scores)


def _as_pm(pm_or_scores, labels=None) -> PredictionMatrix:
    if isinstance(pm_or_scores, PredictionMatrix):
        return pm_or_scores
    return PredictionMatrix(pm_or_scores, labels)


def lrap(pm, labels=None) -> float:
    """Label ranking average precision; ties are resolved by the >= counts."""
    pm = _as_pm(pm, labels)
    f, y = pm.scores, pm.labels.astype(bool)
    if pm.n == 0:
        raise ContractError("lrap of an empty prediction matrix")
    n_true = y.sum(axis=1)
    if np.any(n_true == 0):
        raise ContractError(f"row {int(np.argmax(n_true == 0))} has no true label")
    ge = f[:, None, :] >= f[:, :, None]          # ge[i, j, k] = f_ik >= f_ij
    rank = ge.sum(axis=2)
    ell = (ge & y[:, None, :]).sum(axis=2)
    total = Fraction(0)
    for i in range(pm.n):
        js = np.flatnonzero(y[i])
        total += sum(Fraction(int(ell[i, j]), int(rank[i, j])) for j in js) / int(n_true[i])
    return float(total / pm.n)


def auc_scores(pm, labels=None, class_names=INSTRUMENTS):
    """Per-class ROC AUC via rank sums (ties get half credit) and their mean.

    Classes lacking positives or negatives get NaN and are left out of the
    mean; a note is logged for each.
    """
    pm = _as_pm(pm, labels)
    per_class = np.full(pm.scores.shape[1], np.nan)
    for c in range(pm.scores.shape[1]):
        pos = pm.labels[:, c].astype(bool)
        n_pos, n_neg = int(pos.sum()), int((~pos).sum())
        if n_pos == 0 or n_neg == 0:
            name = class_names[c] if c < len(class_names) else c
            log.info("AUC skipped for class %s: %d positives, %d negatives", name, n_pos, n_neg)
            continue
        twice_ranks = (2 * rankdata(pm.scores[:, c], method="average")).astype(np.int64)
        u2 = int(twice_ranks[pos].sum()) - n_pos * (n_pos + 1)
        per_class[c] = float(Fraction(u2, 2 * n_pos * n_neg))
    scored = per_class[~np.isnan(per_class)]
    if scored.size == 0:
        raise ContractError("no class has both positive and negative examples")
    return per_class, float(scored.mean())


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def f1_scores(pm, labels=None, threshold: float = 0.5):
    """Returns (micro, macro, per_class) for predictions ``score >= threshold``."""
    if not 0.0 < threshold < 1.0:
        raise ContractError(f"threshold must lie in (0, 1), got {threshold}")
    pm = _as_pm(pm, labels)
    pred = pm.scores >= threshold
    y = pm.labels.astype(bool)
    tp = (pred & y).sum(axis=0)
    fp = (pred & ~y).sum(axis=0)
    fn = (~pred & y).sum(axis=0)
    per_class = np.array([_f1(int(a), int(b), int(c)) for a, b, c in zip(tp, fp, fn)])
    micro = _f1(int(tp.sum()), int(fp.sum()), int(fn.sum()))
    return micro, float(per_class.mean()), per_class


def ensemble_average(preds) -> PredictionMatrix:
    """Element-wise mean of several prediction matrices over the same tracks."""
    preds = list(preds)
    if not preds:
        raise ContractError("ensemble of zero prediction matrices")
    first = preds[0]
    for p in preds[1:]:
        if p.scores.shape != first.scores.shape or not np.array_equal(p.labels, first.labels):
            raise ContractError("ensemble members disagree on shape or labels")
    stack = np.stack([p.scores for p in preds])
    # the clip only removes rounding excursions outside the members' range
    scores = np.clip(stack.mean(axis=0), stack.min(axis=0), stack.max(axis=0))
    return PredictionMatrix(scores, first.labels.copy())

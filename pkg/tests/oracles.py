"""Brute-force metric definitions used to cross-check the vectorized ones."""

from fractions import Fraction

import numpy as np


def lrap_brute(scores, labels):
    total = Fraction(0)
    for f, y in zip(scores, labels):
        true = [j for j in range(len(y)) if y[j]]
        row = Fraction(0)
        for j in true:
            above = [k for k in range(len(f)) if f[k] >= f[j]]
            hits = [k for k in above if y[k]]
            row += Fraction(len(hits), len(above))
        total += row / len(true)
    return total / len(scores)


def auc_brute(scores, labels):
    """Per-class AUC as Fractions; None where a class lacks positives or negatives."""
    out = []
    for c in range(scores.shape[1]):
        pos = [s for s, y in zip(scores[:, c], labels[:, c]) if y]
        neg = [s for s, y in zip(scores[:, c], labels[:, c]) if not y]
        if not pos or not neg:
            out.append(None)
            continue
        credit = Fraction(0)
        for p in pos:
            for q in neg:
                credit += 1 if p > q else Fraction(1, 2) if p == q else 0
        out.append(credit / (len(pos) * len(neg)))
    return out


def random_matrix(rng, n_max=20, classes=11):
    """Scores on a coarse grid (so ties occur) and labels with >= 1 bit per row."""
    n = int(rng.integers(1, n_max + 1))
    scores = rng.integers(0, 9, (n, classes)) / 8.0
    if rng.random() < 0.5:
        scores = rng.random((n, classes))
    labels = (rng.random((n, classes)) < 0.25).astype(np.uint8)
    empty = labels.sum(axis=1) == 0
    labels[empty, rng.integers(0, classes, int(empty.sum()))] = 1
    return scores, labels

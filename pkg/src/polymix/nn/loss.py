"""Binary cross-entropy over sigmoid scores."""

from __future__ import annotations

import numpy as np

CLAMP = 1e-7


def bce_loss(scores, targets):
    """Mean BCE over all B*C entries and its gradient with respect to ``scores``.

    Scores are clamped to [1e-7, 1 - 1e-7] before the logarithms.
    """
    s = np.clip(np.asarray(scores, dtype=np.float64), CLAMP, 1.0 - CLAMP)
    t = np.asarray(targets, dtype=np.float64)
    n = s.size
    loss = -np.mean(t * np.log(s) + (1.0 - t) * np.log(1.0 - s))
    grad = (s - t) / (s * (1.0 - s)) / n
    return float(loss), grad


def bce_logit_grad(scores, targets):
    """Gradient of the mean BCE with respect to the pre-sigmoid logits."""
    s = np.asarray(scores)
    return (s - np.asarray(targets, dtype=s.dtype)) / s.size

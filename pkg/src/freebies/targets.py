"""Classification targets: softmax, cross-entropy and label smoothing.

Logarithms are natural throughout.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DomainError

NEGATIVE_MODES = ("epsilon", "epsilon_over_k_minus_1")


@dataclass(frozen=True)
class SmoothingConfig:
    num_classes: int
    epsilon: float = 0.1

    def __post_init__(self):
        if self.num_classes < 2:
            raise DomainError(f"need at least 2 classes, got {self.num_classes}")
        if not 0.0 <= self.epsilon < 1.0:
            raise DomainError(f"epsilon {self.epsilon} outside [0, 1)")


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.size < 1:
        raise DomainError("softmax expects a non-empty vector")
    if not np.all(np.isfinite(z)):
        raise DomainError("non-finite logit")
    e = np.exp(z - z.max())
    return e / e.sum()


def cross_entropy(p, q) -> float:
    """``-sum(q * log p)``; infinite loss is reported as a DomainError."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DomainError(f"shape mismatch {p.shape} vs {q.shape}")
    support = q > 0
    if np.any(p[support] <= 0):
        raise DomainError("q puts mass where p is zero: infinite loss")
    return float(-np.sum(q[support] * np.log(p[support])))


def entropy(q) -> float:
    return cross_entropy(q, q)


def cross_entropy_grad(logits, q) -> np.ndarray:
    """Gradient of ``cross_entropy(softmax(z), q)`` with respect to ``z``."""
    q = np.asarray(q, dtype=np.float64)
    return softmax(logits) * q.sum() - q


def smooth_onehot(y: int, cfg: SmoothingConfig) -> np.ndarray:
    k = cfg.num_classes
    if not 0 <= y < k:
        raise DomainError(f"class index {y} outside [0, {k})")
    off = cfg.epsilon / (k - 1)
    q = np.full(k, off)
    q[y] = 1.0 - cfg.epsilon
    return q


def smooth_sigmoid_targets(targets, epsilon: float, negative_mode: str = "epsilon",
                           num_classes: int | None = None) -> np.ndarray:
    """Pull binary targets away from the saturated ends of a sigmoid.

    Positives become ``1 - epsilon``.  Negatives become ``epsilon`` (the
    two-class reading) or ``epsilon / (K - 1)`` with
    ``negative_mode="epsilon_over_k_minus_1"``, where K defaults to the
    vector length.
    """
    t = np.asarray(targets, dtype=np.float64)
    if not 0.0 <= epsilon < 1.0:
        raise DomainError(f"epsilon {epsilon} outside [0, 1)")
    if not np.all((t == 0.0) | (t == 1.0)):
        raise DomainError("sigmoid targets must be exactly 0 or 1")
    if negative_mode == "epsilon":
        neg = epsilon
    elif negative_mode == "epsilon_over_k_minus_1":
        k = num_classes if num_classes is not None else t.size
        if k < 2:
            raise DomainError("need at least 2 classes")
        neg = epsilon / (k - 1)
    else:
        raise DomainError(f"unknown negative_mode {negative_mode!r}")
    return np.where(t == 1.0, 1.0 - epsilon, neg)


def confidence_gap(logits) -> float:
    z = np.asarray(logits, dtype=np.float64)
    if z.size < 2:
        raise DomainError("need at least 2 logits")
    return float(z.max() - z.min())

#!/usr/bin/env python3
"""
Metric-learning loss kernels with analytic gradients
Triplet loss (all triplets and batch-hard), label-smoothed softmax cross-entropy and their weighted sum
"""

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.special import logsumexp

from reid_errors import (
    ClassOutOfRange,
    InvalidParameter,
    LengthMismatch,
    NoValidTriplet,
    NonFiniteLogit,
    ShapeMismatch,
    SingleClass,
    SingletonClass,
)


@dataclass
class LabeledBatch:
    embeddings: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.embeddings.ndim != 2:
            raise ShapeMismatch(f"embeddings must be 2-D, got shape {self.embeddings.shape}")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.embeddings.shape[0]:
            raise LengthMismatch(
                f"{self.labels.size} labels for {self.embeddings.shape[0]} embeddings"
            )
        if (self.labels < 0).any():
            raise InvalidParameter("identity labels must be nonnegative")


@dataclass(frozen=True)
class LossParams:
    margin: float = 0.3
    epsilon: float = 0.1
    lambda_triplet: float = 10.0
    lambda_softmax: float = 1.0
    num_classes: int = 2

    def __post_init__(self):
        if not self.margin >= 0:
            raise InvalidParameter(f"margin must be >= 0, got {self.margin}")
        _check_epsilon(self.epsilon)
        if not (self.lambda_triplet >= 0 and self.lambda_softmax >= 0):
            raise InvalidParameter("loss weights must be >= 0")
        if self.num_classes < 2:
            raise InvalidParameter(f"num_classes must be >= 2, got {self.num_classes}")


def _check_epsilon(epsilon: float) -> None:
    if not 0.0 <= epsilon < 1.0:
        raise InvalidParameter(f"epsilon must lie in [0, 1), got {epsilon}")


def _distances_and_units(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Pairwise distances D and unit directions u[i, j] = dD[i, j]/dx_i (zero where D is zero)"""
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    safe = np.where(dist > 0, dist, 1.0)
    units = np.where(dist[:, :, None] > 0, diff / safe[:, :, None], 0.0)
    return dist, units


def _gradient_from_weights(weights: np.ndarray, units: np.ndarray) -> np.ndarray:
    # loss = sum_ij w[i, j] * D[i, j]; D[i, j] moves with both endpoints
    return np.einsum('ij,ijd->id', weights + weights.T, units)


def _pair_masks(labels: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    same = labels[:, None] == labels[None, :]
    positive = same & ~np.eye(labels.size, dtype=bool)
    return positive, ~same


def triplet_loss_full(batch: LabeledBatch, margin: float) -> Tuple[float, np.ndarray]:
    """Sum of [m + D(a,p) - D(a,n)]_+ over every valid triplet, with its gradient"""
    positive, negative = _pair_masks(batch.labels)
    valid = positive[:, :, None] & negative[:, None, :]
    if not valid.any():
        raise NoValidTriplet("batch needs an anchor with both a positive and a negative sample")

    dist, units = _distances_and_units(batch.embeddings)
    hinge = margin + dist[:, :, None] - dist[:, None, :]
    active = valid & (hinge > 0)
    loss = float(hinge[active].sum())

    weights = active.sum(axis=2).astype(np.float64) - active.sum(axis=1).astype(np.float64)
    return loss, _gradient_from_weights(weights, units)


def batch_hard_mine(batch: LabeledBatch) -> List[Tuple[int, int, int]]:
    """(anchor, farthest positive, nearest negative) per anchor, ties to the lowest index"""
    classes, counts = np.unique(batch.labels, return_counts=True)
    if classes.size < 2:
        raise SingleClass("batch-hard mining needs at least two identities")
    if (counts < 2).any():
        lonely = classes[counts < 2]
        raise SingletonClass(f"identities with a single sample: {lonely.tolist()}")

    positive, negative = _pair_masks(batch.labels)
    dist, _ = _distances_and_units(batch.embeddings)
    hardest_positive = np.argmax(np.where(positive, dist, -np.inf), axis=1)
    hardest_negative = np.argmin(np.where(negative, dist, np.inf), axis=1)
    return [(a, int(hardest_positive[a]), int(hardest_negative[a])) for a in range(batch.labels.size)]


def triplet_loss_batch_hard(batch: LabeledBatch, margin: float) -> Tuple[float, np.ndarray]:
    """Mean over anchors of [m + D(a,hp) - D(a,hn)]_+; the mined triplets are held fixed for the gradient"""
    triplets = batch_hard_mine(batch)
    dist, units = _distances_and_units(batch.embeddings)
    anchors = np.array([t[0] for t in triplets])
    hp = np.array([t[1] for t in triplets])
    hn = np.array([t[2] for t in triplets])

    terms = margin + dist[anchors, hp] - dist[anchors, hn]
    n = len(triplets)
    loss = float(np.maximum(terms, 0.0).sum() / n)

    coef = (terms > 0).astype(np.float64) / n
    weights = np.zeros_like(dist)
    np.add.at(weights, (anchors, hp), coef)
    np.add.at(weights, (anchors, hn), -coef)
    return loss, _gradient_from_weights(weights, units)


def smooth_targets(num_classes: int, epsilon: float, y: int) -> np.ndarray:
    """q_y = 1 - (N-1)/N * eps, every other q_i = eps/N"""
    if num_classes < 1:
        raise InvalidParameter(f"num_classes must be >= 1, got {num_classes}")
    _check_epsilon(epsilon)
    if not 0 <= y < num_classes:
        raise ClassOutOfRange(f"class {y} outside [0, {num_classes})")
    q = np.full(num_classes, epsilon / num_classes, dtype=np.float64)
    q[y] = 1 - (num_classes - 1) / num_classes * epsilon
    return q


def softmax_ce_smoothed(logits: np.ndarray, y: int, epsilon: float) -> Tuple[float, np.ndarray]:
    """Cross-entropy against smoothed targets; gradient w.r.t. the logits is p - q"""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise ShapeMismatch(f"logits must be a vector, got shape {logits.shape}")
    if not np.isfinite(logits).all():
        raise NonFiniteLogit("logits contain NaN or infinite values")
    q = smooth_targets(logits.size, epsilon, y)
    log_p = logits - logsumexp(logits)
    loss = float(-(q * log_p).sum())
    return loss, np.exp(log_p) - q


def softmax_ce_smoothed_batch(logits: np.ndarray, labels: np.ndarray,
                              epsilon: float) -> Tuple[float, np.ndarray]:
    """Mean of softmax_ce_smoothed over the rows of an n x N logit matrix"""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ShapeMismatch(f"batch logits must be 2-D, got shape {logits.shape}")
    if labels.shape != (logits.shape[0],):
        raise LengthMismatch(f"{labels.size} labels for {logits.shape[0]} logit rows")
    n = logits.shape[0]
    total = 0.0
    grad = np.empty_like(logits)
    for i in range(n):
        loss, g = softmax_ce_smoothed(logits[i], int(labels[i]), epsilon)
        total += loss
        grad[i] = g / n
    return total / n, grad


def trisoft(triplet_loss: float, softmax_loss: float, params: LossParams) -> float:
    if not (math.isfinite(triplet_loss) and math.isfinite(softmax_loss)):
        raise InvalidParameter("trisoft needs finite component losses")
    return params.lambda_triplet * triplet_loss + params.lambda_softmax * softmax_loss


def entropy(q: np.ndarray) -> float:
    q = np.asarray(q, dtype=np.float64)
    nz = q[q > 0]
    return float(-(nz * np.log(nz)).sum())


if __name__ == "__main__":
    batch = LabeledBatch(np.array([[0.0], [0.5], [-0.6]]), np.array([0, 0, 1]))
    loss, _ = triplet_loss_full(batch, margin=0.3)
    print(f"🧪 single active triplet loss: {loss:.6f} (expect 0.2)")
    print(f"🧪 smoothed targets N=4 eps=0.1: {smooth_targets(4, 0.1, 0)}")
    print(f"🧪 trisoft(0.2, 1.5) at 10:1 = {trisoft(0.2, 1.5, LossParams()):.3f}")

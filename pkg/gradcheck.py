#!/usr/bin/env python3
"""
Finite-difference gradient checks for the loss kernels
Central differences in float64; points near a hinge kink or a mining tie are resampled
"""

from dataclasses import dataclass
from typing import Callable, Iterable, List, Tuple

import numpy as np

from losses import (
    LabeledBatch,
    batch_hard_mine,
    softmax_ce_smoothed,
    triplet_loss_batch_hard,
    triplet_loss_full,
)

STEP = 1e-6
TOLERANCE = 1e-6
# distance from a kink or tie that a central step of STEP can never cross
SAFETY = 1e-4
MAX_RESAMPLES = 200


@dataclass
class GradCheckResult:
    name: str
    seed: int
    max_relative_error: float
    resamples: int
    passed: bool


def numerical_gradient(func: Callable[[np.ndarray], float], x: np.ndarray, step: float = STEP) -> np.ndarray:
    """(f(x + h e_i) - f(x - h e_i)) / 2h for every entry of x"""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        original = x.flat[i]
        x.flat[i] = original + step
        upper = func(x)
        x.flat[i] = original - step
        lower = func(x)
        x.flat[i] = original
        grad.flat[i] = (upper - lower) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| / max(max |a|, max |n|, 1e-12)"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def _pairwise(x: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - x[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def full_triplet_is_smooth(batch: LabeledBatch, margin: float) -> bool:
    labels = batch.labels
    dist = _pairwise(batch.embeddings)
    off_diagonal = dist[~np.eye(labels.size, dtype=bool)]
    if off_diagonal.size and off_diagonal.min() < SAFETY:
        return False
    same = labels[:, None] == labels[None, :]
    positive = same & ~np.eye(labels.size, dtype=bool)
    valid = positive[:, :, None] & ~same[:, None, :]
    hinge = margin + dist[:, :, None] - dist[:, None, :]
    return not (np.abs(hinge[valid]) < SAFETY).any()


def batch_hard_is_smooth(batch: LabeledBatch, margin: float) -> bool:
    labels = batch.labels
    dist = _pairwise(batch.embeddings)
    eye = np.eye(labels.size, dtype=bool)
    if dist[~eye].min() < SAFETY:
        return False
    same = labels[:, None] == labels[None, :]
    for a, hp, hn in batch_hard_mine(batch):
        positives = np.sort(dist[a][same[a] & ~eye[a]])
        negatives = np.sort(dist[a][~same[a]])
        if positives.size > 1 and positives[-1] - positives[-2] < SAFETY:
            return False
        if negatives.size > 1 and negatives[1] - negatives[0] < SAFETY:
            return False
        if abs(margin + dist[a, hp] - dist[a, hn]) < SAFETY:
            return False
    return True


def _sample_batch(rng: np.random.Generator, n: int, dim: int, classes: int, margin: float,
                  smooth: Callable[[LabeledBatch, float], bool]) -> Tuple[LabeledBatch, int]:
    labels = np.arange(n) % classes
    for attempt in range(MAX_RESAMPLES):
        batch = LabeledBatch(rng.standard_normal((n, dim)), labels)
        if smooth(batch, margin):
            return batch, attempt
    raise RuntimeError(f"no smooth sample found in {MAX_RESAMPLES} draws")


def _check_triplet(name: str, seed: int, loss_fn, smooth, n: int, classes: int,
                   margin: float = 0.3, dim: int = 4) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    batch, resamples = _sample_batch(rng, n, dim, classes, margin, smooth)

    def value(x: np.ndarray) -> float:
        return loss_fn(LabeledBatch(x, batch.labels), margin)[0]

    _, analytic = loss_fn(batch, margin)
    error = relative_error(analytic, numerical_gradient(value, batch.embeddings))
    return GradCheckResult(name, seed, error, resamples, error <= TOLERANCE)


def check_triplet_full(seed: int) -> GradCheckResult:
    return _check_triplet("triplet_full", seed, triplet_loss_full, full_triplet_is_smooth, n=12, classes=3)


def check_triplet_batch_hard(seed: int) -> GradCheckResult:
    return _check_triplet("triplet_batch_hard", seed, triplet_loss_batch_hard, batch_hard_is_smooth,
                          n=16, classes=4)


def check_softmax(seed: int, num_classes: int = 6, epsilon: float = 0.1) -> GradCheckResult:
    rng = np.random.default_rng(seed)
    logits = rng.standard_normal(num_classes) * 2.0
    y = int(rng.integers(num_classes))
    _, analytic = softmax_ce_smoothed(logits, y, epsilon)
    numeric = numerical_gradient(lambda z: softmax_ce_smoothed(z, y, epsilon)[0], logits)
    error = relative_error(analytic, numeric)
    return GradCheckResult("softmax_smoothed", seed, error, 0, error <= TOLERANCE)


def run_loss_checks(seeds: Iterable[int] = range(20)) -> List[GradCheckResult]:
    results = []
    for seed in seeds:
        results.append(check_triplet_full(seed))
        results.append(check_triplet_batch_hard(seed))
        results.append(check_softmax(seed))
    return results


if __name__ == "__main__":
    results = run_loss_checks(range(3))
    for r in results:
        status = "✅" if r.passed else "❌"
        print(f"{status} {r.name} seed={r.seed} max_rel_err={r.max_relative_error:.2e} resamples={r.resamples}")

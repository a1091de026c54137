#!/usr/bin/env python3
"""
Distance engine - pairwise Euclidean distances, multi-model averaging and metadata fusion
Every entry is accumulated in ascending feature order, so results do not depend on the worker count
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple

import numpy as np

from reid_errors import DimensionMismatch, EmptyList, InvalidParameter, MissingWeight, ShapeMismatch

# Upper bound on the float64 scratch (rows x gallery x dim) held by one block
BLOCK_ELEMENTS = 1 << 21


@dataclass
class FusionWeights:
    gamma: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name, value in self.gamma.items():
            if not math.isfinite(value):
                raise InvalidParameter(f"gamma for family {name!r} must be finite, got {value}")

    @classmethod
    def from_pairs(cls, pairs: Sequence[str]) -> "FusionWeights":
        """Parse `family=value` strings (the repeatable --gamma flag)"""
        gamma = {}
        for pair in pairs:
            if '=' not in pair:
                raise InvalidParameter(f"expected family=value, got {pair!r}")
            name, value = pair.split('=', 1)
            name = name.strip()
            if not name:
                raise InvalidParameter(f"empty family name in {pair!r}")
            try:
                gamma[name] = float(value)
            except ValueError:
                raise InvalidParameter(f"gamma for {name!r} is not a number: {value!r}")
        return cls(gamma)


def _block_rows(cols: int, dim: int) -> int:
    return max(1, min(256, BLOCK_ELEMENTS // max(1, cols * dim)))


def _euclidean_block(a_block: np.ndarray, b: np.ndarray) -> np.ndarray:
    diff = a_block[:, None, :] - b[None, :, :]
    acc = np.zeros(diff.shape[:2], dtype=np.float64)
    for k in range(diff.shape[2]):
        d = diff[:, :, k]
        acc += d * d
    return np.sqrt(acc)


def pairwise_euclidean(a: np.ndarray, b: np.ndarray, workers: int = 1) -> np.ndarray:
    """
    Euclidean distance between every row of `a` and every row of `b`

    Args:
        a: n x d matrix
        b: m x d matrix
        workers: threads computing disjoint row blocks

    Returns:
        n x m distance matrix, bitwise identical for any worker count
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"expected 2-D matrices, got {a.ndim}-D and {b.ndim}-D")
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(
            f"feature dimensions differ: {a.shape[1]} (probe) vs {b.shape[1]} (gallery)"
        )
    if workers < 1:
        raise InvalidParameter(f"workers must be >= 1, got {workers}")

    out = np.empty((a.shape[0], b.shape[0]), dtype=np.float64)
    step = _block_rows(b.shape[0], a.shape[1])
    starts = list(range(0, a.shape[0], step))

    def compute(start: int) -> None:
        stop = min(start + step, a.shape[0])
        out[start:stop] = _euclidean_block(a[start:stop], b)

    if workers == 1 or len(starts) == 1:
        for start in starts:
            compute(start)
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            list(executor.map(compute, starts))
    return out


def joint_distances(query: np.ndarray, gallery: np.ndarray, workers: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """Probe x gallery matrix and the square matrix over queries followed by gallery items"""
    if query.shape[1] != gallery.shape[1]:
        raise DimensionMismatch(
            f"feature dimensions differ: {query.shape[1]} (query) vs {gallery.shape[1]} (gallery)"
        )
    stacked = np.vstack([query, gallery])
    joint = pairwise_euclidean(stacked, stacked, workers)
    return joint[:query.shape[0], query.shape[0]:].copy(), joint


def average_matrices(mats: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise mean of equally shaped distance matrices"""
    if not mats:
        raise EmptyList("average_matrices needs at least one matrix")
    shape = np.shape(mats[0])
    for i, m in enumerate(mats[1:], 1):
        if np.shape(m) != shape:
            raise ShapeMismatch(f"matrix {i} has shape {np.shape(m)}, expected {shape}")
    if len(mats) == 1:
        return np.array(mats[0], dtype=np.float64)

    acc = np.array(mats[0], dtype=np.float64)
    for m in mats[1:]:
        acc += m
    return acc / len(mats)


def fuse_metadata(base: np.ndarray, meta_dists: Dict[str, np.ndarray],
                  weights: FusionWeights) -> np.ndarray:
    """
    Revised distance d'(p, g) = d(p, g) + sum_j gamma_j * D_j(p, g)

    Families are added in sorted name order; a zero weight leaves the base untouched.
    """
    base = np.asarray(base, dtype=np.float64)
    for name in sorted(meta_dists):
        if name not in weights.gamma:
            raise MissingWeight(f"no gamma weight for metadata family {name!r}")
        if np.shape(meta_dists[name]) != base.shape:
            raise ShapeMismatch(
                f"metadata family {name!r} has shape {np.shape(meta_dists[name])}, base has {base.shape}"
            )

    out = base.copy()
    for name in sorted(meta_dists):
        gamma = weights.gamma[name]
        if gamma == 0.0:
            continue
        out = out + gamma * np.asarray(meta_dists[name], dtype=np.float64)
    return out


def metadata_distances(query_meta: Dict[str, np.ndarray], gallery_meta: Dict[str, np.ndarray],
                       workers: int = 1) -> Dict[str, np.ndarray]:
    """Per-family Euclidean distances between query and gallery metadata embeddings"""
    return {
        name: pairwise_euclidean(query_meta[name], gallery_meta[name], workers)
        for name in sorted(query_meta)
    }


def negative_count(dist: np.ndarray) -> int:
    return int(np.count_nonzero(np.asarray(dist) < 0))


if __name__ == "__main__":
    rng = np.random.default_rng(0)
    a = rng.standard_normal((20, 8))
    b = rng.standard_normal((30, 8))
    d1 = pairwise_euclidean(a, b, workers=1)
    d4 = pairwise_euclidean(a, b, workers=4)
    print(f"🧪 3-4-5 check: {pairwise_euclidean(np.array([[0.0, 0.0]]), np.array([[3.0, 4.0]]))[0, 0]}")
    print(f"✅ 1 vs 4 workers identical: {np.array_equal(d1, d4)}")

#!/usr/bin/env python3
"""
k-reciprocal re-ranking with metadata-revised distances, plus distance averaging by track

Items live in one joint index space: queries first, then gallery items.
Neighbour lists exclude their owner and break distance ties by ascending index.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Union

import numpy as np

from reid_dataset import ItemManifest
from reid_errors import InvalidParameter, KTooLarge, ShapeMismatch

PROBE_BLOCK = 64


@dataclass(frozen=True)
class NeighborSet:
    owner: int
    k: int
    members: FrozenSet[int]

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, item: int) -> bool:
        return item in self.members

    def __iter__(self):
        return iter(sorted(self.members))


@dataclass(frozen=True)
class RerankParams:
    k1: int = 20
    k2: int = 6
    lambda_: float = 0.3
    query_expansion: bool = False

    def __post_init__(self):
        if not 1 <= self.k2 <= self.k1:
            raise InvalidParameter(f"need 1 <= k2 <= k1, got k1={self.k1}, k2={self.k2}")
        if not 0.0 <= self.lambda_ <= 1.0:
            raise InvalidParameter(f"lambda must lie in [0, 1], got {self.lambda_}")

    def check_items(self, n: int) -> None:
        if self.k1 >= n:
            raise KTooLarge(f"k1={self.k1} needs more than {self.k1} items, got {n}")


class NeighborIndex:
    """Ranked neighbour lists over a square distance matrix"""

    def __init__(self, all_dist: np.ndarray):
        d = np.asarray(all_dist, dtype=np.float64)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise ShapeMismatch(f"neighbour search needs a square matrix, got shape {d.shape}")
        n = d.shape[0]
        self.n = n

        order = np.argsort(d, axis=1, kind='stable')
        keep = order != np.arange(n)[:, None]
        self.order = order[keep].reshape(n, n - 1)

        # rank[i, j] = position of j in i's list; the owner sits past the end
        self.rank = np.full((n, n), n, dtype=np.int64)
        self.rank[np.repeat(np.arange(n), n - 1), self.order.ravel()] = np.tile(np.arange(n - 1), n)
        self._reciprocal: Dict[int, List[Optional[FrozenSet[int]]]] = {}

    def check_k(self, k: int) -> None:
        if k < 1:
            raise InvalidParameter(f"k must be >= 1, got {k}")
        if k >= self.n:
            raise KTooLarge(f"k={k} must be smaller than the item count {self.n}")

    def nearest(self, owner: int, k: int) -> np.ndarray:
        self.check_k(k)
        return self.order[owner, :k]

    def reciprocal(self, owner: int, k: int) -> FrozenSet[int]:
        cache = self._reciprocal.setdefault(k, [None] * self.n)
        if cache[owner] is None:
            candidates = self.nearest(owner, k)
            mutual = candidates[self.rank[candidates, owner] < k]
            cache[owner] = frozenset(int(q) for q in mutual)
        return cache[owner]

    def expanded(self, owner: int, k1: int) -> FrozenSet[int]:
        """R* for owner; for k1 <= 2 a one-item candidate joins only from inside R, so R* equals R there"""
        base = self.reciprocal(owner, k1)
        half = (k1 + 1) // 2
        grown = set(base)
        for q in sorted(base):
            candidate = self.reciprocal(q, half)
            # |R(q, k/2) & R(p, k)| >= 2/3 |R(q, k/2)|
            if 3 * len(candidate & base) >= 2 * len(candidate):
                grown |= candidate
        grown.discard(owner)
        return frozenset(grown)


def k_nearest(all_dist: np.ndarray, owner: int, k: int) -> NeighborSet:
    index = NeighborIndex(all_dist)
    return NeighborSet(owner, k, frozenset(int(i) for i in index.nearest(owner, k)))


def k_reciprocal(all_dist: np.ndarray, owner: int, k: int) -> NeighborSet:
    return NeighborSet(owner, k, NeighborIndex(all_dist).reciprocal(owner, k))


def expand_reciprocal(all_dist: np.ndarray, owner: int, k1: int) -> NeighborSet:
    index = NeighborIndex(all_dist)
    index.check_k(k1)
    return NeighborSet(owner, k1, index.expanded(owner, k1))


def jaccard_distance(rstar_p: Union[NeighborSet, Iterable[int]],
                     rstar_g: Union[NeighborSet, Iterable[int]]) -> float:
    """1 - |A & B| / |A | B|, and 1.0 when both sets are empty"""
    a = rstar_p.members if isinstance(rstar_p, NeighborSet) else frozenset(rstar_p)
    b = rstar_g.members if isinstance(rstar_g, NeighborSet) else frozenset(rstar_g)
    union = len(a | b)
    if union == 0:
        return 1.0
    return 1 - len(a & b) / union


def _membership(index: NeighborIndex, params: RerankParams) -> np.ndarray:
    n = index.n
    v = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        members = sorted(index.expanded(i, params.k1))
        v[i, members] = 1.0
    if params.query_expansion and params.k2 > 1:
        expanded = np.empty_like(v)
        for i in range(n):
            rows = [i] + [int(j) for j in index.nearest(i, params.k2 - 1)]
            expanded[i] = v[rows].mean(axis=0)
        v = expanded
    return v


def _jaccard_block(vp: np.ndarray, vg: np.ndarray, fuzzy: bool) -> np.ndarray:
    if fuzzy:
        inter = np.minimum(vp[:, None, :], vg[None, :, :]).sum(axis=2)
        union = np.maximum(vp[:, None, :], vg[None, :, :]).sum(axis=2)
    else:
        inter = vp @ vg.T
        union = vp.sum(axis=1)[:, None] + vg.sum(axis=1)[None, :] - inter
    out = np.ones_like(inter)
    np.divide(inter, union, out=inter, where=union > 0)
    np.subtract(1.0, inter, out=out, where=union > 0)
    return out


def jaccard_matrix(all_dist: np.ndarray, num_queries: int, params: RerankParams,
                   workers: int = 1) -> np.ndarray:
    """Jaccard distance between each query's R* and each gallery item's R*"""
    index = NeighborIndex(all_dist)
    params.check_items(index.n)
    v = _membership(index, params)
    vg = v[num_queries:]
    fuzzy = params.query_expansion and params.k2 > 1

    starts = list(range(0, num_queries, PROBE_BLOCK))
    out = np.empty((num_queries, index.n - num_queries), dtype=np.float64)

    def compute(start: int) -> None:
        stop = min(start + PROBE_BLOCK, num_queries)
        out[start:stop] = _jaccard_block(v[start:stop], vg, fuzzy)

    if workers <= 1 or len(starts) <= 1:
        for start in starts:
            compute(start)
    else:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            list(executor.map(compute, starts))
    return out


def rerank(fused: np.ndarray, all_dist: np.ndarray, params: RerankParams,
           workers: int = 1) -> np.ndarray:
    """
    Final distance d*(p, g) = (1 - lambda) * d_J(p, g) + lambda * d'(p, g)

    Args:
        fused: |Q| x |G| revised distances d'
        all_dist: square distances over queries followed by gallery items, used for neighbour sets
        params: k1, k2, lambda and the query expansion switch
    """
    fused = np.asarray(fused, dtype=np.float64)
    all_dist = np.asarray(all_dist, dtype=np.float64)
    if fused.ndim != 2:
        raise ShapeMismatch(f"fused distances must be 2-D, got shape {fused.shape}")
    n = fused.shape[0] + fused.shape[1]
    if all_dist.shape != (n, n):
        raise ShapeMismatch(
            f"joint matrix must be {n}x{n} for {fused.shape[0]} queries and {fused.shape[1]} gallery items, "
            f"got {all_dist.shape}"
        )
    params.check_items(n)

    if params.lambda_ == 1.0:
        return fused.copy()
    jaccard = jaccard_matrix(all_dist, fused.shape[0], params, workers)
    if params.lambda_ == 0.0:
        return jaccard
    return (1 - params.lambda_) * jaccard + params.lambda_ * fused


def average_by_track(dist: np.ndarray, track_ids: Sequence[Optional[int]]) -> np.ndarray:
    """Replace each row's entries within a track by that row's mean over the track"""
    dist = np.asarray(dist, dtype=np.float64)
    if dist.ndim != 2 or dist.shape[1] != len(track_ids):
        raise ShapeMismatch(
            f"distance matrix has shape {dist.shape}, expected {len(track_ids)} gallery columns"
        )
    groups: Dict[int, List[int]] = {}
    for col, track in enumerate(track_ids):
        if track is not None:
            groups.setdefault(track, []).append(col)

    out = dist.copy()
    for cols in groups.values():
        if len(cols) < 2:
            continue
        block = out[:, cols]
        means = block.sum(axis=1) / len(cols)
        # rows already flat keep their value, so a second pass changes nothing
        flat = np.all(block == block[:, :1], axis=1)
        out[:, cols] = np.where(flat, block[:, 0], means)[:, None]
    return out


def track_average(dist: np.ndarray, manifest: ItemManifest) -> np.ndarray:
    """Distance averaging by track over the manifest's gallery items; untracked items stay singletons"""
    return average_by_track(dist, manifest.track_ids("gallery"))


if __name__ == "__main__":
    from distance_engine import joint_distances

    rng = np.random.default_rng(7)
    centers = rng.standard_normal((2, 4)) * 5
    points = np.vstack([centers[i % 2] + rng.standard_normal(4) * 0.5 for i in range(10)])
    qg, joint = joint_distances(points[:2], points[2:])
    out = rerank(qg, joint, RerankParams(k1=4, k2=2, lambda_=0.5))
    print("🔁 Re-ranked distances (2 probes x 8 gallery):")
    print(np.round(out, 3))

#!/usr/bin/env python3
"""
From-definition reference implementations used as test oracles
Plain Python loops over lists; slow on purpose and kept independent of the vectorised code
"""

import math
from typing import Dict, List, Optional, Sequence, Set


def euclidean(a: Sequence[Sequence[float]], b: Sequence[Sequence[float]]) -> List[List[float]]:
    out = []
    for row_a in a:
        row = []
        for row_b in b:
            s = 0.0
            for k in range(len(row_a)):
                diff = row_a[k] - row_b[k]
                s += diff * diff
            row.append(math.sqrt(s))
        out.append(row)
    return out


def fuse(base, meta: Dict[str, Sequence[Sequence[float]]], gamma: Dict[str, float]) -> List[List[float]]:
    out = [list(map(float, row)) for row in base]
    for name in sorted(meta):
        if gamma[name] == 0.0:
            continue
        for i in range(len(out)):
            for j in range(len(out[i])):
                out[i][j] = out[i][j] + gamma[name] * meta[name][i][j]
    return out


def sorted_others(dist, owner: int) -> List[int]:
    others = [j for j in range(len(dist)) if j != owner]
    others.sort(key=lambda j: (dist[owner][j], j))
    return others


def nearest(dist, owner: int, k: int, orders=None) -> List[int]:
    order = orders[owner] if orders is not None else sorted_others(dist, owner)
    return order[:k]


def reciprocal(dist, owner: int, k: int, orders=None) -> Set[int]:
    return {q for q in nearest(dist, owner, k, orders) if owner in nearest(dist, q, k, orders)}


def expanded(dist, owner: int, k1: int, orders=None) -> Set[int]:
    base = reciprocal(dist, owner, k1, orders)
    half = math.ceil(k1 / 2)
    result = set(base)
    for q in base:
        candidate = reciprocal(dist, q, half, orders)
        if 3 * len(candidate & base) >= 2 * len(candidate):
            result |= candidate
    result.discard(owner)
    return result


def jaccard(a: Set[int], b: Set[int]) -> float:
    if not a and not b:
        return 1.0
    return 1 - len(a & b) / len(a | b)


def rerank(fused, joint, k1: int, lam: float) -> List[List[float]]:
    num_q = len(fused)
    orders = [sorted_others(joint, i) for i in range(len(joint))]
    rstar = [expanded(joint, i, k1, orders) for i in range(len(joint))]
    out = []
    for p in range(num_q):
        row = []
        for g in range(len(fused[p])):
            dj = jaccard(rstar[p], rstar[num_q + g])
            row.append((1 - lam) * dj + lam * fused[p][g])
        out.append(row)
    return out


def ranking(row: Sequence[float], valid: Sequence[bool]) -> List[int]:
    idx = [j for j in range(len(row)) if valid[j]]
    idx.sort(key=lambda j: (row[j], j))
    return idx


def average_precision(order: Sequence[int], relevant: Set[int], top_n: Optional[int] = None) -> float:
    if top_n is not None:
        order = order[:top_n]
    hits = 0
    total = 0.0
    for position, item in enumerate(order):
        if item in relevant:
            hits += 1
            total += hits / (position + 1)
    denom = len(relevant) if top_n is None else min(len(relevant), top_n)
    return total / denom


def evaluate(dist, q_ids, g_ids, q_cams, g_cams, cross_camera: bool = False,
             top_n: Optional[int] = None, ks: Sequence[int] = (1, 5, 10)):
    """(mAP, {k: cmc}) over probes with at least one relevant item"""
    aps = []
    hits = {k: 0 for k in ks}
    for p in range(len(dist)):
        valid = [not (cross_camera and g_ids[j] == q_ids[p] and g_cams[j] == q_cams[p])
                 for j in range(len(g_ids))]
        relevant = {j for j in range(len(g_ids)) if valid[j] and g_ids[j] == q_ids[p]}
        if not relevant:
            continue
        order = ranking(dist[p], valid)
        aps.append(average_precision(order, relevant, top_n))
        truncated = order if top_n is None else order[:top_n]
        for k in ks:
            if any(item in relevant for item in truncated[:k]):
                hits[k] += 1
    return sum(aps) / len(aps), {k: hits[k] / len(aps) for k in ks}


def track_average(dist, tracks: Sequence[Optional[int]]) -> List[List[float]]:
    out = [list(row) for row in dist]
    groups: Dict[int, List[int]] = {}
    for col, t in enumerate(tracks):
        if t is not None:
            groups.setdefault(t, []).append(col)
    for cols in groups.values():
        for row in out:
            mean = sum(row[c] for c in cols) / len(cols)
            for c in cols:
                row[c] = mean
    return out


def batch_hard(points, labels):
    """Exhaustive (anchor, farthest positive, nearest negative), ties to the lowest index"""
    n = len(points)
    d = euclidean(points, points)
    out = []
    for a in range(n):
        best_p, best_n = None, None
        for j in range(n):
            if j != a and labels[j] == labels[a] and (best_p is None or d[a][j] > d[a][best_p]):
                best_p = j
            if labels[j] != labels[a] and (best_n is None or d[a][j] < d[a][best_n]):
                best_n = j
        out.append((a, best_p, best_n))
    return out

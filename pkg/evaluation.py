#!/usr/bin/env python3
"""
Retrieval metrics for re-identification - average precision, mAP and CMC Rank@k
Also writes the per-probe evaluation report (plain text and JSON)
"""

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from reid_dataset import ItemManifest
from reid_errors import InvalidParameter, IoFailure, LengthMismatch, NoRelevant, ShapeMismatch

REPORT_RANKS = (1, 5, 10)


@dataclass(frozen=True)
class EvalOptions:
    top_n: Optional[int] = None
    cross_camera: bool = False

    def __post_init__(self):
        if self.top_n is not None and self.top_n < 1:
            raise InvalidParameter(f"top_n must be >= 1, got {self.top_n}")

    @classmethod
    def aicity(cls) -> "EvalOptions":
        """AI City protocol: top-100 lists, same-camera matches removed"""
        return cls(top_n=100, cross_camera=True)


@dataclass
class RankedList:
    probe: int
    order: np.ndarray
    top_n: Optional[int] = None


def rank_gallery(dist_row: np.ndarray, options: EvalOptions, valid_mask: np.ndarray,
                 probe: int = 0) -> RankedList:
    """Ascending-distance order over valid gallery entries, ties by index, truncated to top_n"""
    dist_row = np.asarray(dist_row, dtype=np.float64)
    valid_mask = np.asarray(valid_mask, dtype=bool)
    if dist_row.shape != valid_mask.shape:
        raise LengthMismatch(f"{dist_row.size} distances but {valid_mask.size} mask entries")
    candidates = np.flatnonzero(valid_mask)
    order = candidates[np.argsort(dist_row[candidates], kind='stable')]
    if options.top_n is not None:
        order = order[:options.top_n]
    return RankedList(probe, order, options.top_n)


def average_precision(ranked: RankedList, relevant: Set[int]) -> float:
    """
    AP = (1/R) * sum over hits of (hits so far / rank), ranks 1-based

    R is |relevant|, or min(|relevant|, top_n) for a truncated list.
    """
    if not relevant:
        raise NoRelevant(f"probe {ranked.probe} has no relevant gallery items")
    denominator = len(relevant)
    if ranked.top_n is not None:
        denominator = min(denominator, ranked.top_n)

    hits = 0
    total = 0.0
    for rank, item in enumerate(ranked.order, 1):
        if int(item) in relevant:
            hits += 1
            total += hits / rank
    return total / denominator


def first_hit_rank(ranked: RankedList, relevant: Set[int]) -> Optional[int]:
    for rank, item in enumerate(ranked.order, 1):
        if int(item) in relevant:
            return rank
    return None


@dataclass
class ProbeResult:
    probe_id: str
    ap: Optional[float]
    first_hit: Optional[int]


@dataclass
class EvalReport:
    probes: List[ProbeResult] = field(default_factory=list)
    mean_ap: float = 0.0
    cmc: Dict[int, float] = field(default_factory=dict)
    excluded: List[str] = field(default_factory=list)
    options: Optional[EvalOptions] = None


def _protocol(dist: np.ndarray, manifest: ItemManifest, options: EvalOptions):
    dist = np.asarray(dist, dtype=np.float64)
    q_ids = manifest.identities("query")
    g_ids = manifest.identities("gallery")
    if dist.shape != (q_ids.size, g_ids.size):
        raise ShapeMismatch(
            f"distance matrix {dist.shape} does not match {q_ids.size} queries x {g_ids.size} gallery items"
        )
    q_cams = manifest.cameras("query")
    g_cams = manifest.cameras("gallery")

    for p in range(q_ids.size):
        same_id = g_ids == q_ids[p]
        valid = np.ones(g_ids.size, dtype=bool)
        if options.cross_camera:
            valid &= ~(same_id & (g_cams == q_cams[p]))
        relevant = set(np.flatnonzero(same_id & valid).tolist())
        yield p, rank_gallery(dist[p], options, valid, p), relevant


def _evaluate_probes(dist: np.ndarray, manifest: ItemManifest,
                     options: EvalOptions) -> List[Tuple[int, RankedList, Set[int]]]:
    scored = [(p, ranked, relevant) for p, ranked, relevant in _protocol(dist, manifest, options) if relevant]
    if not scored:
        raise NoRelevant("no probe has a relevant gallery item under the evaluation mask")
    return scored


def mean_ap(dist: np.ndarray, manifest: ItemManifest,
            options: EvalOptions = EvalOptions()) -> Tuple[float, List[Optional[float]]]:
    """mAP over probes with at least one relevant item; excluded probes are None in per_probe"""
    per_probe: List[Optional[float]] = [None] * len(manifest.subset("query"))
    scored = _evaluate_probes(dist, manifest, options)
    for p, ranked, relevant in scored:
        per_probe[p] = average_precision(ranked, relevant)
    aps = [ap for ap in per_probe if ap is not None]
    return sum(aps) / len(aps), per_probe


def cmc_at_k(dist: np.ndarray, manifest: ItemManifest, k: int,
             options: EvalOptions = EvalOptions()) -> float:
    """Fraction of evaluated probes with a correct match among the top k"""
    if k < 1:
        raise InvalidParameter(f"k must be >= 1, got {k}")
    scored = _evaluate_probes(dist, manifest, options)
    hits = sum(1 for _, ranked, relevant in scored if relevant & set(ranked.order[:k].tolist()))
    return hits / len(scored)


def evaluate(dist: np.ndarray, manifest: ItemManifest, options: EvalOptions = EvalOptions(),
             ranks: Sequence[int] = REPORT_RANKS) -> EvalReport:
    queries = manifest.subset("query")
    report = EvalReport(options=options)
    scored = {p: (ranked, relevant) for p, ranked, relevant in _protocol(dist, manifest, options)}
    aps = []
    hit_ranks = []
    for p, record in enumerate(queries):
        ranked, relevant = scored[p]
        if not relevant:
            report.excluded.append(record.image_id)
            report.probes.append(ProbeResult(record.image_id, None, None))
            continue
        ap = average_precision(ranked, relevant)
        hit = first_hit_rank(ranked, relevant)
        aps.append(ap)
        hit_ranks.append(hit)
        report.probes.append(ProbeResult(record.image_id, ap, hit))

    if not aps:
        raise NoRelevant("no probe has a relevant gallery item under the evaluation mask")
    report.mean_ap = sum(aps) / len(aps)
    for k in ranks:
        report.cmc[k] = sum(1 for h in hit_ranks if h is not None and h <= k) / len(hit_ranks)
    return report


def format_report(report: EvalReport) -> str:
    lines = ["# probe_id\tAP\tfirst_hit_rank"]
    for probe in report.probes:
        ap = "excluded" if probe.ap is None else f"{probe.ap:.6f}"
        hit = "-" if probe.first_hit is None else str(probe.first_hit)
        lines.append(f"{probe.probe_id}\t{ap}\t{hit}")
    lines.append("")
    lines.append(f"mAP: {report.mean_ap:.6f}")
    for k, value in sorted(report.cmc.items()):
        lines.append(f"Rank@{k}: {value:.6f}")
    lines.append(f"excluded probes: {len(report.excluded)}")
    return "\n".join(lines) + "\n"


def report_to_dict(report: EvalReport) -> Dict:
    return {
        "probes": [asdict(p) for p in report.probes],
        "mAP": report.mean_ap,
        "cmc": {f"rank{k}": v for k, v in sorted(report.cmc.items())},
        "excluded": list(report.excluded),
        "options": asdict(report.options) if report.options else None,
    }


def write_report(report: EvalReport, text_path: str, json_path: str) -> None:
    try:
        with open(text_path, 'w') as f:
            f.write(format_report(report))
        with open(json_path, 'w') as f:
            json.dump(report_to_dict(report), f, indent=2)
    except OSError as e:
        raise IoFailure(f"Could not write evaluation report: {e}") from e


if __name__ == "__main__":
    ranked = rank_gallery(np.array([0.3, 0.1, 0.2]), EvalOptions(), np.ones(3, dtype=bool))
    print(f"🧪 order: {ranked.order.tolist()} (expect [1, 2, 0])")
    ap = average_precision(RankedList(0, np.arange(5)), {0, 2})
    print(f"🧪 AP for hits at ranks 1 and 3: {ap:.4f} (expect 0.8333)")

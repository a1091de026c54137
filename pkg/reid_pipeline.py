#!/usr/bin/env python3
"""
Re-identification ranking pipeline
Runs dist -> fuse-meta -> rerank -> track-avg -> eval over a dataset directory,
writing every stage's matrix, the evaluation report and a run manifest
"""

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from distance_engine import (
    FusionWeights,
    average_matrices,
    fuse_metadata,
    joint_distances,
    metadata_distances,
    negative_count,
)
from evaluation import EvalOptions, EvalReport, evaluate, write_report
from reid_dataset import EMBEDDINGS_FILE, ReidDataset, load_dataset_dir, load_embeddings, save_embeddings
from reid_errors import ConfigInvalid, InvalidParameter, MissingFile, OutputExists
from rerank import RerankParams, rerank as k_reciprocal_rerank, track_average as average_tracks
from run_manifest import MANIFEST_FILE, RunManifest
from synth import SynthConfig, generate

WORKERS_ENV = "REID_RANK_WORKERS"

DIST_QG = "dist_qg.reid"
DIST_JOINT = "dist_joint.reid"
FUSED_QG = "fused_qg.reid"
FUSED_JOINT = "fused_joint.reid"
RERANK_QG = "rerank_qg.reid"
TRACKAVG_QG = "trackavg_qg.reid"
REPORT_TXT = "report.txt"
REPORT_JSON = "report.json"

IMPROVEMENT_SYNTH = {"intra_sigma": 1.2, "inter_sep": 2.0, "track_len": 4}
IMPROVEMENT_RERANK = {"k1": 10, "k2": 3, "lambda_": 0.3}

_BOOL_KEYS = ("query_expansion", "cross_camera", "fuse_metadata", "rerank", "track_average")
_INT_KEYS = ("k1", "k2", "workers")


def workers_from_env() -> Optional[int]:
    value = os.getenv(WORKERS_ENV)
    if value is None or value.strip() == "":
        return None
    try:
        return int(value)
    except ValueError:
        raise ConfigInvalid(f"{WORKERS_ENV} must be an integer, got {value!r}")


def resolve_workers(flag: Optional[int], configured: Optional[int] = None) -> int:
    """Flag, then config value, then REID_RANK_WORKERS, then 1"""
    candidate = flag if flag is not None else configured
    if candidate is None:
        candidate = workers_from_env()
    if candidate is None:
        return 1
    if candidate < 1:
        raise InvalidParameter(f"workers must be >= 1, got {candidate}")
    return candidate


@dataclass
class PipelineConfig:
    dataset_dir: str = ""
    embeddings: List[str] = field(default_factory=lambda: [EMBEDDINGS_FILE])
    out_dir: str = "reid_output"
    gamma: Dict[str, float] = field(default_factory=dict)
    k1: int = 20
    k2: int = 6
    lambda_: float = 0.3
    query_expansion: bool = False
    top_n: Optional[int] = None
    cross_camera: bool = False
    fuse_metadata: bool = True
    rerank: bool = True
    track_average: bool = True
    workers: int = 1

    @classmethod
    def from_dict(cls, data: Dict) -> "PipelineConfig":
        """Build from the flat JSON layout (gamma.<family>, lambda, ...)"""
        config = cls()
        for key, value in data.items():
            if key.startswith("gamma."):
                family = key[len("gamma."):]
                if not family or isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigInvalid(f"{key} must be a number, got {value!r}")
                config.gamma[family] = float(value)
            elif key in _BOOL_KEYS:
                if not isinstance(value, bool):
                    raise ConfigInvalid(f"{key} must be true or false, got {value!r}")
                setattr(config, key, value)
            elif key in _INT_KEYS:
                if isinstance(value, bool) or not isinstance(value, int):
                    raise ConfigInvalid(f"{key} must be an integer, got {value!r}")
                setattr(config, key, value)
            elif key == "lambda":
                if isinstance(value, bool) or not isinstance(value, (int, float)):
                    raise ConfigInvalid(f"lambda must be a number, got {value!r}")
                config.lambda_ = float(value)
            elif key == "top_n":
                if value is not None and (isinstance(value, bool) or not isinstance(value, int)):
                    raise ConfigInvalid(f"top_n must be an integer or null, got {value!r}")
                config.top_n = value
            elif key in ("dataset_dir", "out_dir"):
                if not isinstance(value, str):
                    raise ConfigInvalid(f"{key} must be a string, got {value!r}")
                setattr(config, key, value)
            elif key == "embeddings":
                if isinstance(value, str):
                    value = [value]
                if not isinstance(value, list) or not value or not all(isinstance(v, str) for v in value):
                    raise ConfigInvalid("embeddings must be a non-empty list of file names")
                config.embeddings = list(value)
            else:
                raise ConfigInvalid(f"unknown configuration key {key!r}")
        return config

    def to_dict(self) -> Dict:
        data = {
            'dataset_dir': self.dataset_dir,
            'embeddings': list(self.embeddings),
            'out_dir': self.out_dir,
        }
        for family, value in sorted(self.gamma.items()):
            data[f'gamma.{family}'] = value
        data.update({
            'k1': self.k1,
            'k2': self.k2,
            'lambda': self.lambda_,
            'query_expansion': self.query_expansion,
            'top_n': self.top_n,
            'cross_camera': self.cross_camera,
            'fuse_metadata': self.fuse_metadata,
            'rerank': self.rerank,
            'track_average': self.track_average,
            'workers': self.workers,
        })
        return data

    def validate(self):
        """Raise the parameter types' own errors early, before any stage runs"""
        self.rerank_params()
        self.eval_options()
        self.weights()
        if self.workers < 1:
            raise InvalidParameter(f"workers must be >= 1, got {self.workers}")

    def rerank_params(self) -> RerankParams:
        return RerankParams(self.k1, self.k2, self.lambda_, self.query_expansion)

    def eval_options(self) -> EvalOptions:
        return EvalOptions(self.top_n, self.cross_camera)

    def weights(self) -> FusionWeights:
        return FusionWeights(dict(self.gamma))


def load_config(config_file: str, workers: Optional[int] = None) -> PipelineConfig:
    """Load a pipeline configuration from JSON; a `workers` flag beats the file, then REID_RANK_WORKERS"""
    if not os.path.isfile(config_file):
        raise MissingFile(config_file)
    try:
        with open(config_file, 'r') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigInvalid(f"{config_file} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigInvalid(f"{config_file} must hold a JSON object")

    config = PipelineConfig.from_dict(data)
    config.workers = resolve_workers(workers, config.workers if 'workers' in data else None)
    return config


@dataclass
class PipelineResult:
    raw_qg: np.ndarray
    raw_joint: np.ndarray
    fused_qg: Optional[np.ndarray] = None
    fused_joint: Optional[np.ndarray] = None
    reranked: Optional[np.ndarray] = None
    averaged: Optional[np.ndarray] = None
    baseline: Optional[EvalReport] = None
    report: Optional[EvalReport] = None
    stages: List[str] = field(default_factory=list)
    negative_entries: int = 0

    @property
    def final(self) -> np.ndarray:
        for candidate in (self.averaged, self.reranked, self.fused_qg):
            if candidate is not None:
                return candidate
        return self.raw_qg


def compute_distances(dataset: ReidDataset, embeddings: Sequence[np.ndarray], workers: int = 1):
    """(qg, joint) averaged over one or more manifest-aligned embedding matrices"""
    qg_parts = []
    joint_parts = []
    for emb in embeddings:
        qg, joint = joint_distances(dataset.split_rows(emb, "query"), dataset.split_rows(emb, "gallery"), workers)
        qg_parts.append(qg)
        joint_parts.append(joint)
    return average_matrices(qg_parts), average_matrices(joint_parts)


def fuse_stage(dataset: ReidDataset, qg: np.ndarray, joint: np.ndarray, gamma: Dict[str, float],
               workers: int = 1):
    """Metadata-revised distances for both the probe x gallery and the joint matrix"""
    families = dataset.meta.names()
    for family in sorted(set(gamma) - set(families)):
        print(f"⚠️ gamma given for metadata family {family!r}, which the dataset does not have")
    weights = FusionWeights({name: gamma.get(name, 0.0) for name in families})

    query_meta = {name: dataset.split_rows(dataset.meta.families[name], "query") for name in families}
    gallery_meta = {name: dataset.split_rows(dataset.meta.families[name], "gallery") for name in families}
    joint_meta = {name: np.vstack([query_meta[name], gallery_meta[name]]) for name in families}

    fused_qg = fuse_metadata(qg, metadata_distances(query_meta, gallery_meta, workers), weights)
    fused_joint = fuse_metadata(joint, metadata_distances(joint_meta, joint_meta, workers), weights)
    return fused_qg, fused_joint


def run_stages(dataset: ReidDataset, config: PipelineConfig,
               embeddings: Optional[Sequence[np.ndarray]] = None) -> PipelineResult:
    """In-memory pipeline; `embeddings` defaults to the dataset's own matrix"""
    config.validate()
    workers = config.workers
    if embeddings is None:
        embeddings = [dataset.embeddings]

    qg, joint = compute_distances(dataset, embeddings, workers)
    result = PipelineResult(raw_qg=qg, raw_joint=joint, stages=["dist"])
    result.baseline = evaluate(qg, dataset.manifest, config.eval_options())

    current_qg, current_joint = qg, joint
    if config.fuse_metadata:
        current_qg, current_joint = fuse_stage(dataset, qg, joint, config.gamma, workers)
        result.fused_qg, result.fused_joint = current_qg, current_joint
        result.negative_entries = negative_count(current_qg) + negative_count(current_joint)
        if result.negative_entries:
            print(f"⚠️ {result.negative_entries} negative entries in the fused distances")
        result.stages.append("fuse-meta")

    if config.rerank:
        current_qg = k_reciprocal_rerank(current_qg, current_joint, config.rerank_params(), workers)
        result.reranked = current_qg
        result.stages.append("rerank")

    if config.track_average:
        result.averaged = average_tracks(current_qg, dataset.manifest)
        result.stages.append("track-avg")

    result.report = evaluate(result.final, dataset.manifest, config.eval_options())
    result.stages.append("eval")
    return result


def improvement_run(seed: int, workers: int = 1) -> Tuple[float, float]:
    """(raw mAP, rerank + track-avg mAP) on the harder synthetic setting used to freeze goldens"""
    dataset = generate(SynthConfig(seed=seed, **IMPROVEMENT_SYNTH))
    config = PipelineConfig(fuse_metadata=False, workers=workers, **IMPROVEMENT_RERANK)
    result = run_stages(dataset, config)
    return result.baseline.mean_ap, result.report.mean_ap


def claim_outputs(out_dir: str, names: Sequence[str], force: bool = False) -> Dict[str, str]:
    """Create the output directory and map each file name to its path; existing files need force"""
    paths = {name: os.path.join(out_dir, name) for name in names}
    if not force:
        for path in paths.values():
            if os.path.exists(path):
                raise OutputExists(path)
    os.makedirs(out_dir, exist_ok=True)
    return paths


class ReidPipeline:
    def __init__(self, config: PipelineConfig):
        self.config = config
        self.config.validate()

    def output_names(self) -> List[str]:
        names = [DIST_QG, DIST_JOINT]
        if self.config.fuse_metadata:
            names += [FUSED_QG, FUSED_JOINT]
        if self.config.rerank:
            names.append(RERANK_QG)
        if self.config.track_average:
            names.append(TRACKAVG_QG)
        return names + [REPORT_TXT, REPORT_JSON, MANIFEST_FILE]

    def load_inputs(self):
        config = self.config
        dataset = load_dataset_dir(config.dataset_dir, config.embeddings[0])
        extra = [load_embeddings(os.path.join(config.dataset_dir, name)) for name in config.embeddings[1:]]
        return dataset, [dataset.embeddings] + extra

    def input_paths(self, dataset: ReidDataset) -> List[str]:
        config = self.config
        paths = [os.path.join(config.dataset_dir, "manifest.csv")]
        paths += [os.path.join(config.dataset_dir, name) for name in config.embeddings]
        paths += [os.path.join(config.dataset_dir, "meta", f"{name}.reid") for name in dataset.meta.names()]
        return paths

    def run(self, force: bool = False) -> PipelineResult:
        """Run every enabled stage and write artifacts into out_dir"""
        config = self.config
        print(f"🔍 Loading dataset from {config.dataset_dir}")
        dataset, embeddings = self.load_inputs()
        print(f"📋 {len(dataset.manifest.subset('query'))} queries, "
              f"{len(dataset.manifest.subset('gallery'))} gallery items, "
              f"{len(embeddings)} embedding file(s), metadata: {dataset.meta.names() or 'none'}")

        paths = claim_outputs(config.out_dir, self.output_names(), force)
        result = run_stages(dataset, config, embeddings)

        matrices = {
            DIST_QG: result.raw_qg,
            DIST_JOINT: result.raw_joint,
            FUSED_QG: result.fused_qg,
            FUSED_JOINT: result.fused_joint,
            RERANK_QG: result.reranked,
            TRACKAVG_QG: result.averaged,
        }
        for name, matrix in matrices.items():
            if matrix is not None:
                save_embeddings(matrix, paths[name])
        write_report(result.report, paths[REPORT_TXT], paths[REPORT_JSON])

        manifest = RunManifest("pipeline", config.to_dict())
        for stage in result.stages:
            manifest.add_stage(stage)
        for path in self.input_paths(dataset):
            manifest.add_input(path)
        for name in self.output_names():
            if name != MANIFEST_FILE and (name not in matrices or matrices[name] is not None):
                manifest.add_output(paths[name])
        manifest.record_metric("baseline_map", result.baseline.mean_ap)
        manifest.record_metric("final_map", result.report.mean_ap)
        manifest.save(paths[MANIFEST_FILE])

        print(f"📊 raw mAP {result.baseline.mean_ap:.4f} -> final mAP {result.report.mean_ap:.4f} "
              f"(stages: {', '.join(result.stages)})")
        print(f"✅ Wrote {len(self.output_names())} files to {config.out_dir}")
        return result


if __name__ == "__main__":
    import sys

    config_file = sys.argv[1] if len(sys.argv) > 1 else "pipeline.json"
    ReidPipeline(load_config(config_file)).run()

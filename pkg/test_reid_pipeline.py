#!/usr/bin/env python3
"""
Tests for pipeline configuration, stage composition, determinism and the run manifest
"""

import json
import os

import numpy as np
import pytest

from distance_engine import average_matrices, joint_distances
from evaluation import evaluate
from reid_dataset import save_embeddings, write_dataset_dir
from reid_errors import ConfigInvalid, InvalidParameter, MissingFile, OutputExists
from reid_pipeline import (
    MANIFEST_FILE,
    REPORT_JSON,
    TRACKAVG_QG,
    WORKERS_ENV,
    PipelineConfig,
    ReidPipeline,
    improvement_run,
    load_config,
    resolve_workers,
    run_stages,
)
from reid_rank import main
from run_manifest import file_sha256, load_run_manifest
from synth import SynthConfig, generate

GOLDEN_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "goldens", "synth_default.json")


def small_dataset(seed=0, track_len=3):
    return generate(SynthConfig(num_identities=12, images_per_identity=5, dim=8, track_len=track_len, seed=seed))


def write_config(tmp_path, **values):
    path = tmp_path / "pipeline.json"
    path.write_text(json.dumps(values))
    return str(path)


def test_flat_config_keys():
    config = PipelineConfig.from_dict({
        "dataset_dir": "data", "gamma.color": 0.5, "k1": 12, "lambda": 0.25, "track_average": False, "top_n": 100,
    })
    assert config.gamma == {"color": 0.5}
    assert (config.k1, config.lambda_, config.track_average, config.top_n) == (12, 0.25, False, 100)
    assert PipelineConfig.from_dict(config.to_dict()) == config


@pytest.mark.parametrize("data", [
    {"colour": 1},
    {"k1": "20"},
    {"k1": True},
    {"rerank": 1},
    {"gamma.color": "high"},
    {"lambda": None},
    {"embeddings": []},
])
def test_bad_config_values(data):
    with pytest.raises(ConfigInvalid):
        PipelineConfig.from_dict(data)


def test_parameters_are_checked_before_running():
    with pytest.raises(InvalidParameter):
        PipelineConfig(k1=3, k2=5).validate()
    with pytest.raises(InvalidParameter):
        PipelineConfig(lambda_=2.0).validate()


def test_load_config_errors(tmp_path):
    with pytest.raises(MissingFile):
        load_config(str(tmp_path / "absent.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigInvalid):
        load_config(str(bad))


def test_workers_precedence(tmp_path, monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "3")
    assert load_config(write_config(tmp_path)).workers == 3
    assert load_config(write_config(tmp_path, workers=2)).workers == 2
    assert resolve_workers(5, 2) == 5
    assert resolve_workers(None, None) == 3
    monkeypatch.delenv(WORKERS_ENV)
    assert resolve_workers(None, None) == 1
    monkeypatch.setenv(WORKERS_ENV, "many")
    with pytest.raises(ConfigInvalid):
        resolve_workers(None, None)
    with pytest.raises(InvalidParameter):
        resolve_workers(0)
    assert resolve_workers(4, None) == 4
    assert resolve_workers(None, 2) == 2
    assert load_config(write_config(tmp_path, workers=2)).workers == 2
    assert load_config(write_config(tmp_path), workers=3).workers == 3


def test_zero_workers_in_config_is_rejected(tmp_path, monkeypatch):
    monkeypatch.delenv(WORKERS_ENV, raising=False)
    with pytest.raises(InvalidParameter):
        load_config(write_config(tmp_path, workers=0))
    monkeypatch.setenv(WORKERS_ENV, "4")
    with pytest.raises(InvalidParameter):
        load_config(write_config(tmp_path, workers=0))


def test_env_workers_apply_only_without_file_value(tmp_path, monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "0")
    with pytest.raises(InvalidParameter):
        load_config(write_config(tmp_path))
    assert load_config(write_config(tmp_path, workers=2)).workers == 2


def test_all_stages_off_reports_raw_evaluation():
    dataset = small_dataset()
    config = PipelineConfig(fuse_metadata=False, rerank=False, track_average=False)
    result = run_stages(dataset, config)
    assert result.stages == ["dist", "eval"]
    assert result.final is result.raw_qg
    assert result.report.mean_ap == result.baseline.mean_ap


def test_identity_stages_reproduce_raw_distances():
    dataset = small_dataset(track_len=1)
    config = PipelineConfig(gamma={"color": 0.0, "type": 0.0}, lambda_=1.0)
    result = run_stages(dataset, config)
    assert result.stages == ["dist", "fuse-meta", "rerank", "track-avg", "eval"]
    assert result.final.tobytes() == result.raw_qg.tobytes()


def test_metadata_revises_both_matrices():
    dataset = small_dataset()
    config = PipelineConfig(gamma={"color": 0.5}, rerank=False, track_average=False)
    result = run_stages(dataset, config)
    assert not np.array_equal(result.fused_qg, result.raw_qg)
    assert not np.array_equal(result.fused_joint, result.raw_joint)
    nq = result.raw_qg.shape[0]
    assert np.allclose(result.fused_joint[:nq, nq:], result.fused_qg, rtol=0, atol=1e-12)


def test_several_embedding_files_are_averaged():
    dataset = small_dataset()
    other = dataset.embeddings * 0.5 + 1.0
    result = run_stages(dataset, PipelineConfig(fuse_metadata=False, rerank=False, track_average=False),
                        embeddings=[dataset.embeddings, other])
    parts = [joint_distances(dataset.split_rows(e, "query"), dataset.split_rows(e, "gallery"))[0]
             for e in (dataset.embeddings, other)]
    assert result.raw_qg.tobytes() == average_matrices(parts).tobytes()


def test_every_stage_is_worker_independent():
    dataset = generate(SynthConfig())
    gamma = {"color": 0.3, "type": 0.2}
    one = run_stages(dataset, PipelineConfig(gamma=gamma, workers=1))
    four = run_stages(dataset, PipelineConfig(gamma=gamma, workers=4))
    for name in ("raw_qg", "raw_joint", "fused_qg", "fused_joint", "reranked", "averaged"):
        assert getattr(one, name).tobytes() == getattr(four, name).tobytes(), name
    assert one.report.mean_ap == four.report.mean_ap


def test_rerank_and_track_averaging_improve_synthetic_ranking():
    runs = [improvement_run(seed) for seed in range(20)]
    improved = sum(1 for raw, final in runs if final >= raw)
    assert improved >= 18
    assert np.mean([final - raw for raw, final in runs]) > 0


@pytest.fixture(scope="module")
def golden():
    # the first run freezes goldens/synth_default.json; later runs must reproduce it
    if not os.path.exists(GOLDEN_PATH):
        assert main(["golden", "--out", GOLDEN_PATH]) == 0
    with open(GOLDEN_PATH) as f:
        return json.load(f)


def test_frozen_golden_values(golden):
    dataset = generate(SynthConfig(seed=golden["synth_default"]["seed"]))
    qg, _ = joint_distances(dataset.split_rows(dataset.embeddings, "query"),
                            dataset.split_rows(dataset.embeddings, "gallery"))
    report = evaluate(qg, dataset.manifest)
    assert abs(report.mean_ap - golden["synth_default"]["raw_map"]) <= 1e-12
    for k, value in report.cmc.items():
        assert abs(value - golden["synth_default"]["raw_cmc"][f"rank{k}"]) <= 1e-12
    for run in golden["improvement"]["runs"][:3]:
        raw, final = improvement_run(run["seed"])
        assert abs(raw - run["raw_map"]) <= 1e-12
        assert abs(final - run["pipeline_map"]) <= 1e-12


def test_frozen_runs_show_improvement(golden):
    runs = golden["improvement"]["runs"]
    assert len(runs) == 20
    assert sum(1 for run in runs if run["pipeline_map"] >= run["raw_map"]) >= 18
    assert np.mean([run["pipeline_map"] - run["raw_map"] for run in runs]) > 0


def test_pipeline_writes_artifacts_and_manifest(tmp_path):
    data_dir = tmp_path / "data"
    dataset = small_dataset()
    write_dataset_dir(dataset, str(data_dir))
    out_dir = tmp_path / "out"
    config = PipelineConfig(dataset_dir=str(data_dir), out_dir=str(out_dir), k1=8, k2=3, gamma={"type": 0.1})

    result = ReidPipeline(config).run()
    for name in ReidPipeline(config).output_names():
        assert (out_dir / name).exists(), name

    manifest = load_run_manifest(str(out_dir / MANIFEST_FILE))
    assert manifest["stages"] == ["dist", "fuse-meta", "rerank", "track-avg", "eval"]
    assert manifest["config"]["k1"] == 8
    assert manifest["config"]["gamma.type"] == 0.1
    assert manifest["metrics"]["final_map"] == result.report.mean_ap
    assert manifest["metrics"]["baseline_map"] == result.baseline.mean_ap
    report_path = str(out_dir / REPORT_JSON)
    assert manifest["outputs"][report_path] == file_sha256(report_path)
    assert len(manifest["inputs"]) == 4

    with pytest.raises(OutputExists):
        ReidPipeline(config).run()
    again = ReidPipeline(config).run(force=True)
    assert again.averaged.tobytes() == result.averaged.tobytes()


def test_pipeline_reads_extra_embedding_files(tmp_path):
    data_dir = tmp_path / "data"
    dataset = small_dataset()
    write_dataset_dir(dataset, str(data_dir))
    save_embeddings(dataset.embeddings + 0.25, str(data_dir / "second.reid"))
    config = PipelineConfig(dataset_dir=str(data_dir), out_dir=str(tmp_path / "out"),
                            embeddings=["embeddings.reid", "second.reid"], k1=8, k2=3)
    result = ReidPipeline(config).run()
    # a constant shift leaves every distance unchanged up to rounding
    assert np.allclose(result.raw_qg, run_stages(dataset, PipelineConfig(k1=8, k2=3)).raw_qg, rtol=0, atol=1e-12)
    assert os.path.exists(os.path.join(config.out_dir, TRACKAVG_QG))

#!/usr/bin/env python3
"""
Tests for the reid-rank command line: exit codes, output guarding and stage chaining
"""

import json

import numpy as np
import pytest

from reid_dataset import load_embeddings, save_embeddings
from reid_pipeline import TRACKAVG_QG, WORKERS_ENV
from reid_rank import main
from run_manifest import load_run_manifest


@pytest.fixture
def dataset_dir(tmp_path):
    path = str(tmp_path / "data")
    code = main(["synth", "--out", path, "--num-identities", "10", "--images-per-identity", "5",
                 "--dim", "8", "--seed", "3"])
    assert code == 0
    return path


def test_synth_then_validate(dataset_dir, capsys):
    assert main(["validate", dataset_dir]) == 0
    assert "✅ Dataset is consistent" in capsys.readouterr().out


def test_dist_guards_existing_outputs(dataset_dir, tmp_path, capsys):
    out = str(tmp_path / "dist")
    assert main(["dist", dataset_dir, "--out", out]) == 0
    capsys.readouterr()
    assert main(["dist", dataset_dir, "--out", out]) == 2
    assert "output exists" in capsys.readouterr().err
    assert main(["dist", dataset_dir, "--out", out, "--force"]) == 0
    assert load_embeddings(str(tmp_path / "dist" / "dist_qg.reid")).shape == (10, 40)
    assert load_embeddings(str(tmp_path / "dist" / "dist_joint.reid")).shape == (50, 50)


def test_split_dimension_mismatch(tmp_path, capsys):
    save_embeddings(np.zeros((2, 4)), str(tmp_path / "q.reid"))
    save_embeddings(np.zeros((3, 5)), str(tmp_path / "g.reid"))
    code = main(["dist", "--query-emb", str(tmp_path / "q.reid"), "--gallery-emb", str(tmp_path / "g.reid"),
                 "--out", str(tmp_path / "out")])
    assert code == 2
    err = capsys.readouterr().err
    assert err.startswith("❌")
    assert "4" in err and "5" in err


def test_missing_dataset_is_an_io_failure(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "nowhere")]) == 1
    assert "❌" in capsys.readouterr().err


def test_wrong_magic_is_a_contract_failure(dataset_dir, tmp_path, capsys):
    bad = tmp_path / "bad.reid"
    bad.write_bytes(b"NOPE" + bytes(40))
    assert main(["eval", dataset_dir, "--dist", str(bad)]) == 2
    assert "magic" in capsys.readouterr().err


def test_invalid_workers_env(dataset_dir, tmp_path, monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "lots")
    assert main(["dist", dataset_dir, "--out", str(tmp_path / "out")]) == 2


def test_workers_flag_beats_invalid_env(dataset_dir, tmp_path, monkeypatch):
    monkeypatch.setenv(WORKERS_ENV, "lots")
    assert main(["dist", dataset_dir, "--out", str(tmp_path / "out"), "--workers", "2"]) == 0
    config = tmp_path / "pipeline.json"
    config.write_text(json.dumps({"dataset_dir": dataset_dir, "k1": 12, "k2": 4}))
    assert main(["pipeline", str(config), "--out", str(tmp_path / "run"), "--workers", "2"]) == 0
    assert load_run_manifest(str(tmp_path / "run" / "run_manifest.json"))["config"]["workers"] == 2


def test_zero_workers_in_config_exits_2(dataset_dir, tmp_path, capsys):
    config = tmp_path / "pipeline.json"
    config.write_text(json.dumps({"dataset_dir": dataset_dir, "workers": 0}))
    assert main(["pipeline", str(config), "--out", str(tmp_path / "run")]) == 2
    assert "workers" in capsys.readouterr().err


def test_stage_commands_chain_to_pipeline_result(dataset_dir, tmp_path):
    out = tmp_path / "steps"
    assert main(["dist", dataset_dir, "--out", str(out)]) == 0
    assert main(["fuse-meta", dataset_dir, "--qg", str(out / "dist_qg.reid"), "--joint", str(out / "dist_joint.reid"),
                 "--gamma", "color=0.2", "--gamma", "type=0.1", "--out", str(out)]) == 0
    assert main(["rerank", "--dist", str(out / "fused_qg.reid"), "--joint", str(out / "fused_joint.reid"),
                 "--k1", "12", "--k2", "4", "--lambda", "0.3", "--out", str(out)]) == 0
    assert main(["track-avg", dataset_dir, "--dist", str(out / "rerank_qg.reid"), "--out", str(out)]) == 0

    config = tmp_path / "pipeline.json"
    config.write_text(json.dumps({"dataset_dir": dataset_dir, "out_dir": str(tmp_path / "run"),
                                  "gamma.color": 0.2, "gamma.type": 0.1, "k1": 12, "k2": 4, "lambda": 0.3}))
    assert main(["pipeline", str(config)]) == 0

    chained = load_embeddings(str(out / TRACKAVG_QG))
    piped = load_embeddings(str(tmp_path / "run" / TRACKAVG_QG))
    assert chained.tobytes() == piped.tobytes()


def test_eval_prints_and_writes_reports(dataset_dir, tmp_path, capsys):
    out = tmp_path / "dist"
    main(["dist", dataset_dir, "--out", str(out)])
    capsys.readouterr()
    assert main(["eval", dataset_dir, "--dist", str(out / "dist_qg.reid")]) == 0
    assert "mAP:" in capsys.readouterr().out
    assert main(["eval", dataset_dir, "--dist", str(out / "dist_qg.reid"), "--out", str(tmp_path / "eval")]) == 0
    data = json.loads((tmp_path / "eval" / "report.json").read_text())
    assert 0.0 <= data["mAP"] <= 1.0
    assert (tmp_path / "eval" / "report.txt").exists()


def test_pipeline_aicity_overrides(dataset_dir, tmp_path):
    config = tmp_path / "pipeline.json"
    config.write_text(json.dumps({"dataset_dir": dataset_dir, "k1": 12, "k2": 4}))
    out = tmp_path / "run"
    assert main(["pipeline", str(config), "--aicity", "--out", str(out), "--workers", "2"]) == 0
    manifest = load_run_manifest(str(out / "run_manifest.json"))
    assert manifest["config"]["top_n"] == 100
    assert manifest["config"]["cross_camera"] is True
    assert manifest["config"]["workers"] == 2
    assert manifest["command"] == "pipeline"


def test_pipeline_rejects_unknown_config_key(tmp_path, capsys):
    config = tmp_path / "pipeline.json"
    config.write_text(json.dumps({"kone": 3}))
    assert main(["pipeline", str(config)]) == 2
    assert "kone" in capsys.readouterr().err


def test_loss_check(capsys):
    assert main(["loss-check", "--batches", "2"]) == 0
    assert "gradient checks passed" in capsys.readouterr().out


def test_fuse_demo(tmp_path, capsys):
    assert main(["fuse-demo"]) == 0
    assert "conservation holds" in capsys.readouterr().out
    out = tmp_path / "fused"
    assert main(["fuse-demo", "--channels", "5", "--out", str(out)]) == 0
    assert (out / "glamor.reid").exists()
    assert (out / "counter.reid.json").exists()
    assert main(["fuse-demo", "--global-map", str(out / "glamor.reid"), "--local-map", str(out / "counter.reid")]) == 0


def test_fuse_demo_bad_sidecar_exits_2(tmp_path, capsys):
    out = tmp_path / "fused"
    assert main(["fuse-demo", "--out", str(out)]) == 0
    (out / "glamor.reid.json").write_text("{broken")
    capsys.readouterr()
    assert main(["fuse-demo", "--global-map", str(out / "glamor.reid"), "--local-map", str(out / "counter.reid")]) == 2
    assert capsys.readouterr().err.startswith("❌")


def test_golden_file(tmp_path):
    out = tmp_path / "goldens" / "synth.json"
    assert main(["golden", "--runs", "2", "--out", str(out)]) == 0
    golden = json.loads(out.read_text())
    assert golden["synth_default"]["seed"] == 42
    assert [run["seed"] for run in golden["improvement"]["runs"]] == [0, 1]
    assert main(["golden", "--runs", "1", "--out", str(out)]) == 2

#!/usr/bin/env python3
"""
Tests for the seeded synthetic dataset generator
"""

import json
import os

import numpy as np
import pytest

from distance_engine import joint_distances, pairwise_euclidean
from evaluation import mean_ap
from reid_dataset import group_tracks, load_dataset_dir, validate_dataset
from reid_errors import ConfigInvalid
from synth import MetaFamily, SynthConfig, config_from_dict, generate, place_centers, write_synth_dataset


def raw_map(dataset):
    q = dataset.split_rows(dataset.embeddings, "query")
    g = dataset.split_rows(dataset.embeddings, "gallery")
    qg, _ = joint_distances(q, g)
    return mean_ap(qg, dataset.manifest)[0]


def test_default_layout():
    config = SynthConfig()
    dataset = generate(config)
    assert dataset.embeddings.shape == (400, 32)
    assert len(dataset.manifest.subset("query")) == 50
    assert len(dataset.manifest.subset("gallery")) == 350
    assert dataset.meta.names() == ["color", "type"]
    assert dataset.meta.families["color"].shape == (400, 8)
    assert validate_dataset(dataset.manifest, dataset.embeddings, dataset.meta).ok


def test_one_query_per_identity():
    dataset = generate(SynthConfig(num_identities=7, images_per_identity=3, seed=1))
    assert sorted(dataset.manifest.identities("query").tolist()) == list(range(7))


def test_same_seed_is_bitwise_identical():
    a = generate(SynthConfig(seed=9))
    b = generate(SynthConfig(seed=9))
    assert a.manifest == b.manifest
    assert a.embeddings.tobytes() == b.embeddings.tobytes()
    for name in a.meta.names():
        assert a.meta.families[name].tobytes() == b.meta.families[name].tobytes()


def test_different_seeds_differ():
    assert generate(SynthConfig(seed=1)).embeddings.tobytes() != generate(SynthConfig(seed=2)).embeddings.tobytes()


def test_centres_respect_separation():
    rng = np.random.default_rng(0)
    centers = place_centers(rng, 30, 4, 2.5)
    d = pairwise_euclidean(centers, centers)
    assert d[~np.eye(30, dtype=bool)].min() >= 2.5


def test_tracks_share_camera_identity_and_split():
    dataset = generate(SynthConfig(track_len=3, seed=5))
    for members in group_tracks(dataset.manifest.items).values():
        assert len(members) <= 3
        assert len({m.camera_id for m in members}) == 1
        assert len({m.identity for m in members}) == 1
        assert {m.split for m in members} == {"gallery"}


def test_tight_clusters_are_perfectly_ranked():
    dataset = generate(SynthConfig(intra_sigma=1e-9, inter_sep=10.0, seed=3))
    assert abs(raw_map(dataset) - 1.0) <= 1e-9


def test_lower_spread_never_hurts_raw_map():
    maps = [raw_map(generate(SynthConfig(intra_sigma=s, seed=42))) for s in (2.0, 1.0, 0.5, 0.25)]
    assert all(a <= b for a, b in zip(maps, maps[1:]))


def test_metadata_follows_fidelity():
    config = SynthConfig(meta_fidelity=1.0, meta_families={"color": MetaFamily(dim=4, classes=3)}, seed=8)
    color = generate(config).meta.families["color"]
    # noise-free metadata takes at most one value per class
    assert len({row.tobytes() for row in color}) <= 3


@pytest.mark.parametrize("field,value", [
    ("intra_sigma", 0.0),
    ("inter_sep", -1.0),
    ("images_per_identity", 1),
    ("meta_fidelity", 1.5),
    ("seed", -1),
    ("track_len", 0),
])
def test_invalid_configs(field, value):
    config = SynthConfig()
    setattr(config, field, value)
    with pytest.raises(ConfigInvalid):
        generate(config)


def test_config_from_dict():
    config = config_from_dict({"seed": 4, "meta_families": {"type": {"dim": 2, "classes": 6}}})
    assert config.seed == 4
    assert config.meta_dims == {"type": 2}
    with pytest.raises(ConfigInvalid):
        config_from_dict({"colour_count": 3})


def test_written_directory_loads_back(tmp_path):
    config = SynthConfig(num_identities=5, images_per_identity=4, dim=6, seed=11)
    written = write_synth_dataset(config, str(tmp_path))
    assert os.path.join(str(tmp_path), "synth_config.json") in written
    assert json.loads((tmp_path / "synth_config.json").read_text())["seed"] == 11

    loaded = load_dataset_dir(str(tmp_path))
    original = generate(config)
    assert loaded.manifest == original.manifest
    assert loaded.embeddings.tobytes() == original.embeddings.tobytes()
    assert loaded.meta.names() == ["color", "type"]

#!/usr/bin/env python3
"""
Tests for channel-mask fusion of global and local feature maps
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from feature_fusion import (
    conservation_holds,
    fuse,
    load_feature_map,
    make_masks,
    provenance_holds,
    save_feature_map,
)
from reid_errors import InvalidParameter, MissingFile, NonFiniteValue, ShapeMismatch

CHANNELS = [1, 2, 3, 8, 64]


def test_masks_for_four_channels():
    m_g, m_l = make_masks(4)
    assert m_g.tolist() == [0, 0, 1, 1]
    assert m_l.tolist() == [1, 1, 0, 0]


def test_single_channel_mask():
    m_g, m_l = make_masks(1)
    assert m_g.tolist() == [1]
    assert m_l.tolist() == [0]


@pytest.mark.parametrize("channels", list(range(1, 12)) + [64])
def test_masks_are_complementary(channels):
    m_g, m_l = make_masks(channels)
    assert (m_g + m_l).tolist() == [1] * channels
    assert int((m_g == 0).sum()) == channels // 2


def test_mask_needs_a_channel():
    with pytest.raises(InvalidParameter):
        make_masks(0)


def test_two_channel_example():
    f_g = np.array([[[1.0, 2.0]]])
    f_l = np.array([[[3.0, 4.0]]])
    assert fuse(f_g, f_l, "glamor").ravel().tolist() == [3.0, 2.0]
    assert fuse(f_g, f_l, "counter").ravel().tolist() == [1.0, 4.0]


def test_equal_inputs_pass_through_bitwise():
    f = np.random.default_rng(1).standard_normal((3, 2, 5))
    assert fuse(f, f, "glamor").tobytes() == f.tobytes()
    assert fuse(f, f, "counter").tobytes() == f.tobytes()


def test_conservation_and_provenance_on_seeded_maps():
    rng = np.random.default_rng(2024)
    for i in range(100):
        h, w = (int(v) for v in rng.integers(1, 9, size=2))
        c = CHANNELS[i % len(CHANNELS)]
        f_g = rng.standard_normal((h, w, c))
        f_l = rng.standard_normal((h, w, c))
        total = fuse(f_g, f_l, "glamor") + fuse(f_g, f_l, "counter")
        assert np.array_equal(total, f_g + f_l)
        assert conservation_holds(f_g, f_l)
        assert provenance_holds(f_g, f_l)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 8), st.sampled_from(CHANNELS), st.integers(0, 2 ** 32 - 1))
def test_conservation_property(h, w, c, seed):
    rng = np.random.default_rng(seed)
    f_g = rng.standard_normal((h, w, c)) * 1e3
    f_l = rng.standard_normal((h, w, c)) * 1e-3
    assert conservation_holds(f_g, f_l)
    assert provenance_holds(f_g, f_l)


def test_fuse_errors():
    with pytest.raises(ShapeMismatch):
        fuse(np.zeros((2, 2, 3)), np.zeros((2, 2, 4)))
    with pytest.raises(ShapeMismatch):
        fuse(np.zeros((2, 3)), np.zeros((2, 3)))
    with pytest.raises(InvalidParameter):
        fuse(np.zeros((1, 1, 2)), np.zeros((1, 1, 2)), "average")
    bad = np.zeros((1, 2, 2))
    bad[0, 1, 1] = np.inf
    with pytest.raises(NonFiniteValue):
        fuse(bad, np.zeros((1, 2, 2)))


def test_feature_map_files(tmp_path):
    fmap = np.random.default_rng(6).standard_normal((3, 5, 8))
    path = str(tmp_path / "fg.reid")
    save_feature_map(fmap, path)
    assert (tmp_path / "fg.reid.json").exists()
    assert load_feature_map(path).tobytes() == fmap.tobytes()
    assert load_feature_map(path).shape == (3, 5, 8)


def test_feature_map_needs_sidecar(tmp_path):
    with pytest.raises(MissingFile):
        load_feature_map(str(tmp_path / "absent.reid"))


@pytest.mark.parametrize("sidecar", [
    "{not json",
    '{"height": 2}',
    '{"height": "2", "width": 2}',
    '{"height": -2, "width": -1}',
    '{"height": true, "width": 2}',
    "[2, 1]",
])
def test_malformed_sidecar(tmp_path, sidecar):
    path = str(tmp_path / "fmap.reid")
    save_feature_map(np.ones((2, 1, 3)), path)
    (tmp_path / "fmap.reid.json").write_text(sidecar)
    with pytest.raises(ShapeMismatch):
        load_feature_map(path)

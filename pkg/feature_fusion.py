#!/usr/bin/env python3
"""
Channel-mask fusion of global and local feature maps

    glamor:  F = M_G * F_G + M_L * F_L
    counter: F = M_L * F_G + M_G * F_L

M_G zeroes the first floor(C/2) channels and keeps the rest; M_L is its complement.
The masks are exact 0/1 selections, so fusion is implemented as channel selection.
"""

import json
import os
from typing import Tuple

import numpy as np

from reid_dataset import load_embeddings, save_embeddings
from reid_errors import InvalidParameter, IoFailure, MissingFile, NonFiniteValue, ShapeMismatch

MODES = ("glamor", "counter")


def make_masks(channels: int) -> Tuple[np.ndarray, np.ndarray]:
    """(M_G, M_L) as uint8 vectors; M_G has floor(C/2) leading zeros"""
    if channels < 1:
        raise InvalidParameter(f"channel count must be >= 1, got {channels}")
    m_g = np.zeros(channels, dtype=np.uint8)
    m_g[channels // 2:] = 1
    return m_g, 1 - m_g


def check_feature_map(fmap: np.ndarray, name: str = "feature map") -> np.ndarray:
    fmap = np.asarray(fmap, dtype=np.float64)
    if fmap.ndim != 3 or min(fmap.shape) < 1:
        raise ShapeMismatch(f"{name} must be H x W x C with positive sizes, got shape {fmap.shape}")
    bad = ~np.isfinite(fmap)
    if bad.any():
        h, w, c = np.argwhere(bad)[0]
        raise NonFiniteValue(int(h * fmap.shape[1] + w), int(c), name)
    return fmap


def fuse(f_global: np.ndarray, f_local: np.ndarray, mode: str = "glamor") -> np.ndarray:
    f_global = check_feature_map(f_global, "global feature map")
    f_local = check_feature_map(f_local, "local feature map")
    if f_global.shape != f_local.shape:
        raise ShapeMismatch(f"feature maps differ in shape: {f_global.shape} vs {f_local.shape}")
    if mode not in MODES:
        raise InvalidParameter(f"fusion mode must be one of {MODES}, got {mode!r}")

    m_g, m_l = make_masks(f_global.shape[2])
    keep_global = (m_g if mode == "glamor" else m_l).astype(bool)
    return np.where(keep_global[None, None, :], f_global, f_local)


def conservation_holds(f_global: np.ndarray, f_local: np.ndarray) -> bool:
    """fuse(glamor) + fuse(counter) == F_G + F_L, with no tolerance"""
    total = fuse(f_global, f_local, "glamor") + fuse(f_global, f_local, "counter")
    return bool(np.array_equal(total, np.asarray(f_global) + np.asarray(f_local)))


def provenance_holds(f_global: np.ndarray, f_local: np.ndarray) -> bool:
    """Glamor output takes low channels from F_L and high channels from F_G bitwise; counter the reverse"""
    half = np.shape(f_global)[2] // 2
    glamor = fuse(f_global, f_local, "glamor")
    counter = fuse(f_global, f_local, "counter")
    f_global = np.asarray(f_global, dtype=np.float64)
    f_local = np.asarray(f_local, dtype=np.float64)

    def same_bits(x: np.ndarray, y: np.ndarray) -> bool:
        return x.tobytes() == y.tobytes()

    return (same_bits(glamor[:, :, :half], f_local[:, :, :half])
            and same_bits(glamor[:, :, half:], f_global[:, :, half:])
            and same_bits(counter[:, :, :half], f_global[:, :, :half])
            and same_bits(counter[:, :, half:], f_local[:, :, half:]))


def to_matrix(fmap: np.ndarray) -> np.ndarray:
    h, w, c = fmap.shape
    return np.ascontiguousarray(fmap).reshape(h * w, c)


def from_matrix(matrix: np.ndarray, height: int, width: int) -> np.ndarray:
    if matrix.shape[0] != height * width:
        raise ShapeMismatch(f"{matrix.shape[0]} rows cannot hold a {height}x{width} map")
    return np.asarray(matrix).reshape(height, width, matrix.shape[1])


def save_feature_map(fmap: np.ndarray, path: str) -> None:
    """Write rows=H*W, cols=C in the REID format plus a <path>.json sidecar holding H and W"""
    fmap = check_feature_map(fmap)
    save_embeddings(to_matrix(fmap), path)
    try:
        with open(path + ".json", 'w') as f:
            json.dump({"height": fmap.shape[0], "width": fmap.shape[1]}, f, indent=2)
    except OSError as e:
        raise IoFailure(f"Could not write sidecar for {path}: {e}") from e


def load_feature_map(path: str) -> np.ndarray:
    sidecar = path + ".json"
    if not os.path.isfile(sidecar):
        raise MissingFile(sidecar)
    try:
        with open(sidecar, 'r') as f:
            shape = json.load(f)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ShapeMismatch(f"{sidecar} is not valid JSON: {e}") from e
    except OSError as e:
        raise IoFailure(f"Could not read {sidecar}: {e}") from e

    dims = []
    for key in ("height", "width"):
        value = shape.get(key) if isinstance(shape, dict) else None
        if isinstance(value, bool) or not isinstance(value, int) or value < 1:
            raise ShapeMismatch(f"{sidecar}: {key} must be a positive integer, got {value!r}")
        dims.append(value)
    return from_matrix(load_embeddings(path), *dims)


if __name__ == "__main__":
    f_g = np.array([[[1.0, 2.0]]])
    f_l = np.array([[[3.0, 4.0]]])
    print(f"🧪 masks C=4: {make_masks(4)}")
    print(f"🧪 glamor: {fuse(f_g, f_l, 'glamor').ravel()}  counter: {fuse(f_g, f_l, 'counter').ravel()}")
    print(f"✅ conservation: {conservation_holds(f_g, f_l)}  provenance: {provenance_holds(f_g, f_l)}")

#!/usr/bin/env python3
"""
Dataset loading and persistence for re-identification ranking
Embedding/distance matrices use the REID binary format, item manifests a comma-separated text file

Binary layout (all little-endian):
    bytes 0-3    magic b"REID"
    bytes 4-7    version (uint32, 1)
    bytes 8-15   rows (uint64)
    bytes 16-23  cols (uint64)
    bytes 24-27  reserved, zero
    payload      rows*cols float64, row-major
"""

import os
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from reid_errors import (
    BadMagic,
    DuplicateId,
    IoFailure,
    MissingFile,
    MissingLabels,
    NonFiniteValue,
    ParseError,
    ShapeMismatch,
    TrackSplitConflict,
)

MAGIC = b"REID"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIQQI")
HEADER_SIZE = HEADER.size  # 28
SPLITS = ("query", "gallery", "train")

MANIFEST_FILE = "manifest.csv"
EMBEDDINGS_FILE = "embeddings.reid"
META_DIR = "meta"


# ---------------------------------------------------------------------------
# Binary matrices
# ---------------------------------------------------------------------------

def check_matrix(matrix: np.ndarray, source: str = "matrix") -> np.ndarray:
    """Return `matrix` as a 2-D float64 array, raising on empty shape or non-finite values"""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ShapeMismatch(f"{source} must be 2-D, got {matrix.ndim}-D")
    rows, cols = matrix.shape
    if rows < 1 or cols < 1:
        raise ShapeMismatch(f"{source} must have at least one row and one column, got {rows}x{cols}")
    bad = ~np.isfinite(matrix)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise NonFiniteValue(int(row), int(col), source)
    return matrix


def load_embeddings(path: str) -> np.ndarray:
    """
    Load a REID binary matrix

    Returns a read-only float64 array with the header-declared shape.
    Raises MissingFile, BadMagic, ShapeMismatch or NonFiniteValue.
    """
    if not os.path.isfile(path):
        raise MissingFile(path)
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except OSError as e:
        raise IoFailure(f"Could not read {path}: {e}") from e

    if data[:4] != MAGIC:
        raise BadMagic(f"{path}: expected magic {MAGIC!r}, found {data[:4]!r}")
    if len(data) < HEADER_SIZE:
        raise ShapeMismatch(f"{path}: truncated header ({len(data)} of {HEADER_SIZE} bytes)")

    _, version, rows, cols, reserved = HEADER.unpack_from(data, 0)
    if version != FORMAT_VERSION:
        raise BadMagic(f"{path}: unsupported format version {version}")
    if reserved != 0:
        raise BadMagic(f"{path}: reserved header bytes must be zero, found {reserved}")
    if rows < 1 or cols < 1:
        raise ShapeMismatch(f"{path}: header declares empty shape {rows}x{cols}")

    payload = len(data) - HEADER_SIZE
    expected = rows * cols * 8
    if payload != expected:
        raise ShapeMismatch(
            f"{path}: header declares {rows}x{cols} ({expected} bytes) but payload has {payload} bytes"
        )

    values = np.frombuffer(data, dtype='<f8', offset=HEADER_SIZE).reshape(rows, cols)
    matrix = check_matrix(values.astype(np.float64), source=path)
    matrix.setflags(write=False)
    return matrix


def save_embeddings(matrix: np.ndarray, path: str) -> None:
    """Write a matrix in the REID binary format; load_embeddings inverts it bit for bit"""
    matrix = check_matrix(matrix)
    rows, cols = matrix.shape
    header = HEADER.pack(MAGIC, FORMAT_VERSION, rows, cols, 0)
    payload = np.ascontiguousarray(matrix, dtype='<f8').tobytes()
    try:
        with open(path, 'wb') as f:
            f.write(header)
            f.write(payload)
    except OSError as e:
        raise IoFailure(f"Could not write {path}: {e}") from e


# Distance matrices share the embedding format
load_matrix = load_embeddings
save_matrix = save_embeddings


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ItemRecord:
    image_id: str
    identity: Optional[int]
    camera_id: int
    track_id: Optional[int]
    split: str


@dataclass(frozen=True)
class ItemManifest:
    items: Tuple[ItemRecord, ...]

    def __len__(self) -> int:
        return len(self.items)

    def indices(self, split: str) -> List[int]:
        """Manifest positions of the items in `split`, in manifest order"""
        return [i for i, item in enumerate(self.items) if item.split == split]

    def subset(self, split: str) -> List[ItemRecord]:
        return [item for item in self.items if item.split == split]

    def identities(self, split: str) -> np.ndarray:
        records = self.subset(split)
        missing = [r.image_id for r in records if r.identity is None]
        if missing:
            raise MissingLabels(
                f"{len(missing)} {split} items have no identity label (first: {missing[0]})"
            )
        return np.array([r.identity for r in records], dtype=np.int64)

    def cameras(self, split: str) -> np.ndarray:
        return np.array([r.camera_id for r in self.subset(split)], dtype=np.int64)

    def track_ids(self, split: str) -> List[Optional[int]]:
        return [r.track_id for r in self.subset(split)]


def _parse_optional_int(value: str, name: str, line_number: int) -> Optional[int]:
    value = value.strip()
    if not value:
        return None
    return _parse_int(value, name, line_number)


def _parse_int(value: str, name: str, line_number: int) -> int:
    value = value.strip()
    if not (value.isascii() and value.isdigit()):
        raise ParseError(line_number, f"{name} must be a nonnegative integer, got {value!r}")
    return int(value)


def parse_manifest_lines(lines: Sequence[str]) -> ItemManifest:
    """Parse manifest text lines (1-based line numbers in errors) and check manifest invariants"""
    records = []
    for line_number, raw in enumerate(lines, 1):
        line = raw.rstrip('\r\n')
        if not line.strip() or line.lstrip().startswith('#'):
            continue

        fields = line.split(',')
        if len(fields) != 5:
            raise ParseError(line_number, f"expected 5 comma-separated fields, got {len(fields)}")

        image_id, identity, camera_id, track_id, split = fields
        image_id = image_id.strip()
        if not image_id:
            raise ParseError(line_number, "image_id is empty")
        if not camera_id.strip():
            raise ParseError(line_number, "camera_id is required")
        split = split.strip()
        if split not in SPLITS:
            raise ParseError(line_number, f"split must be one of {', '.join(SPLITS)}, got {split!r}")

        records.append(ItemRecord(
            image_id=image_id,
            identity=_parse_optional_int(identity, "identity", line_number),
            camera_id=_parse_int(camera_id, "camera_id", line_number),
            track_id=_parse_optional_int(track_id, "track_id", line_number),
            split=split,
        ))

    manifest = ItemManifest(tuple(records))
    check_manifest(manifest)
    return manifest


def check_manifest(manifest: ItemManifest) -> None:
    """Raise DuplicateId or TrackSplitConflict on the first violation"""
    for problem in manifest_problems(manifest):
        kind, detail = problem
        if kind == "DuplicateId":
            raise DuplicateId(detail)
        raise TrackSplitConflict(detail)


def manifest_problems(manifest: ItemManifest) -> List[Tuple[str, str]]:
    problems = []
    seen = set()
    for item in manifest.items:
        key = (item.split, item.image_id)
        if key in seen:
            problems.append(("DuplicateId", f"image_id {item.image_id!r} appears twice in split {item.split}"))
        seen.add(key)

    for track_id, members in sorted(group_tracks(manifest.items).items()):
        splits = sorted({item.split for item in members})
        if len(splits) > 1:
            problems.append(("TrackSplitConflict", f"track {track_id} spans splits {', '.join(splits)}"))
    return problems


def group_tracks(items: Sequence[ItemRecord]) -> Dict[int, List[ItemRecord]]:
    tracks: Dict[int, List[ItemRecord]] = {}
    for item in items:
        if item.track_id is not None:
            tracks.setdefault(item.track_id, []).append(item)
    return tracks


def load_manifest(path: str) -> ItemManifest:
    if not os.path.isfile(path):
        raise MissingFile(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            lines = f.readlines()
    except UnicodeDecodeError as e:
        raise ParseError(1, f"manifest is not valid UTF-8: {e}") from e
    except OSError as e:
        raise IoFailure(f"Could not read {path}: {e}") from e
    return parse_manifest_lines(lines)


def save_manifest(manifest: ItemManifest, path: str) -> None:
    def fmt(value: Optional[int]) -> str:
        return "" if value is None else str(value)

    try:
        with open(path, 'w', encoding='utf-8') as f:
            f.write("# image_id,identity,camera_id,track_id,split\n")
            for item in manifest.items:
                f.write(f"{item.image_id},{fmt(item.identity)},{item.camera_id},{fmt(item.track_id)},{item.split}\n")
    except OSError as e:
        raise IoFailure(f"Could not write {path}: {e}") from e


# ---------------------------------------------------------------------------
# Metadata features and validation
# ---------------------------------------------------------------------------

@dataclass
class MetadataFeatureSet:
    families: Dict[str, np.ndarray] = field(default_factory=dict)

    def names(self) -> List[str]:
        return sorted(self.families)


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str
    family: Optional[str] = None


@dataclass
class ValidationReport:
    violations: List[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def kinds(self) -> List[str]:
        return [v.kind for v in self.violations]

    def lines(self) -> List[str]:
        out = []
        for v in self.violations:
            where = f" [{v.family}]" if v.family else ""
            out.append(f"{v.kind}{where}: {v.detail}")
        return out


def _matrix_violations(matrix: np.ndarray, expected_rows: int, family: Optional[str]) -> List[Violation]:
    label = f"metadata family {family!r}" if family else "embeddings"
    violations = []
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        return [Violation("ShapeMismatch", f"{label} must be 2-D, got {matrix.ndim}-D", family)]
    if matrix.shape[0] != expected_rows:
        violations.append(Violation(
            "CountMismatch", f"{label} has {matrix.shape[0]} rows, manifest has {expected_rows} items", family
        ))
    bad = ~np.isfinite(matrix)
    if bad.any():
        row, col = np.argwhere(bad)[0]
        violations.append(Violation(
            "NonFiniteValue", f"{label}: {int(bad.sum())} non-finite values, first at row {row}, col {col}", family
        ))
    return violations


def validate_dataset(manifest: ItemManifest, emb: np.ndarray,
                     meta: Optional[MetadataFeatureSet] = None) -> ValidationReport:
    """Collect every consistency violation; an empty report means the dataset is consistent"""
    report = ValidationReport()
    for kind, detail in manifest_problems(manifest):
        report.violations.append(Violation(kind, detail))

    for track_id, members in sorted(group_tracks(manifest.items).items()):
        if not any(item.split == "gallery" for item in members):
            report.violations.append(Violation("OrphanTrack", f"track {track_id} has no gallery items"))
        cameras = sorted({item.camera_id for item in members})
        if len(cameras) > 1:
            report.violations.append(Violation(
                "TrackCameraConflict", f"track {track_id} spans cameras {cameras}"
            ))

    report.violations.extend(_matrix_violations(emb, len(manifest), None))
    if meta is not None:
        for name in meta.names():
            report.violations.extend(_matrix_violations(meta.families[name], len(manifest), name))
    return report


# ---------------------------------------------------------------------------
# Dataset directories
# ---------------------------------------------------------------------------

@dataclass
class ReidDataset:
    manifest: ItemManifest
    embeddings: np.ndarray
    meta: MetadataFeatureSet

    def split_rows(self, matrix: np.ndarray, split: str) -> np.ndarray:
        """Rows of a manifest-aligned matrix that belong to `split`"""
        if matrix.shape[0] != len(self.manifest):
            raise ShapeMismatch(
                f"matrix has {matrix.shape[0]} rows, manifest has {len(self.manifest)} items"
            )
        return matrix[self.manifest.indices(split)]


def load_metadata_dir(meta_dir: str) -> MetadataFeatureSet:
    meta = MetadataFeatureSet()
    if not os.path.isdir(meta_dir):
        return meta
    for filename in sorted(os.listdir(meta_dir)):
        if filename.endswith('.reid'):
            meta.families[filename[:-len('.reid')]] = load_embeddings(os.path.join(meta_dir, filename))
    return meta


def load_dataset_dir(dataset_dir: str, embeddings_file: str = EMBEDDINGS_FILE) -> ReidDataset:
    """Load manifest.csv, the embedding matrix and meta/<family>.reid from a dataset directory"""
    manifest = load_manifest(os.path.join(dataset_dir, MANIFEST_FILE))
    embeddings = load_embeddings(os.path.join(dataset_dir, embeddings_file))
    meta = load_metadata_dir(os.path.join(dataset_dir, META_DIR))
    return ReidDataset(manifest, embeddings, meta)


def write_dataset_dir(dataset: ReidDataset, dataset_dir: str) -> List[str]:
    """Write a dataset directory, returning the written paths"""
    try:
        os.makedirs(os.path.join(dataset_dir, META_DIR), exist_ok=True)
    except OSError as e:
        raise IoFailure(f"Could not create {dataset_dir}: {e}") from e

    written = [os.path.join(dataset_dir, MANIFEST_FILE), os.path.join(dataset_dir, EMBEDDINGS_FILE)]
    save_manifest(dataset.manifest, written[0])
    save_embeddings(dataset.embeddings, written[1])
    for name in dataset.meta.names():
        path = os.path.join(dataset_dir, META_DIR, f"{name}.reid")
        save_embeddings(dataset.meta.families[name], path)
        written.append(path)
    return written


if __name__ == "__main__":
    import sys

    if len(sys.argv) < 2:
        print("Usage: python reid_dataset.py <dataset-dir>")
        sys.exit(1)

    dataset = load_dataset_dir(sys.argv[1])
    report = validate_dataset(dataset.manifest, dataset.embeddings, dataset.meta)
    print(f"📋 {len(dataset.manifest)} items, embeddings {dataset.embeddings.shape}, "
          f"metadata families: {dataset.meta.names() or 'none'}")
    for line in report.lines():
        print(f"⚠️ {line}")
    if report.ok:
        print("✅ Dataset is consistent")

#!/usr/bin/env python3
"""
Seeded synthetic re-identification datasets
Identity clusters with cameras, tracks and metadata families for desk-scale pipeline checks

Random numbers come from numpy's Generator(PCG64(seed)); Gaussian noise is Generator.standard_normal.
Draw order is fixed: identity centres, image noise, track cameras, metadata prototypes,
metadata class assignment, metadata noise.
"""

import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np

from reid_dataset import ItemManifest, ItemRecord, MetadataFeatureSet, ReidDataset, write_dataset_dir
from reid_errors import ConfigInvalid, IoFailure

# tries per centre before the placement radius grows
PLACEMENT_TRIES = 200
RADIUS_GROWTH = 1.25


@dataclass
class MetaFamily:
    dim: int
    classes: int


def default_meta_families() -> Dict[str, MetaFamily]:
    # grouped colour palette and six vehicle-type categories
    return {"color": MetaFamily(dim=8, classes=9), "type": MetaFamily(dim=8, classes=6)}


@dataclass
class SynthConfig:
    num_identities: int = 50
    images_per_identity: int = 8
    dim: int = 32
    intra_sigma: float = 1.0
    inter_sep: float = 2.5
    num_cameras: int = 4
    track_len: int = 4
    meta_families: Dict[str, MetaFamily] = field(default_factory=default_meta_families)
    meta_fidelity: float = 0.8
    seed: int = 42

    @property
    def meta_dims(self) -> Dict[str, int]:
        return {name: fam.dim for name, fam in self.meta_families.items()}

    def validate(self) -> None:
        problems = []
        if self.num_identities < 1:
            problems.append("num_identities must be >= 1")
        if self.images_per_identity < 2:
            problems.append("images_per_identity must be >= 2")
        if self.dim < 1:
            problems.append("dim must be >= 1")
        if not (math.isfinite(self.intra_sigma) and self.intra_sigma > 0):
            problems.append("intra_sigma must be > 0")
        if not (math.isfinite(self.inter_sep) and self.inter_sep > 0):
            problems.append("inter_sep must be > 0")
        if self.num_cameras < 1:
            problems.append("num_cameras must be >= 1")
        if self.track_len < 1:
            problems.append("track_len must be >= 1")
        if not 0.0 <= self.meta_fidelity <= 1.0:
            problems.append("meta_fidelity must lie in [0, 1]")
        if not 0 <= self.seed < 2 ** 64:
            problems.append("seed must be an unsigned 64-bit integer")
        for name, fam in self.meta_families.items():
            if fam.dim < 1 or fam.classes < 1:
                problems.append(f"metadata family {name!r} needs dim >= 1 and classes >= 1")
        if problems:
            raise ConfigInvalid("; ".join(problems))

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["meta_families"] = {name: asdict(fam) for name, fam in sorted(self.meta_families.items())}
        return data


def place_centers(rng: np.random.Generator, count: int, dim: int, separation: float) -> np.ndarray:
    """Random points in a ball, rejected until every pair is at least `separation` apart"""
    radius = separation * max(1.0, count ** (1.0 / dim))
    centers: List[np.ndarray] = []
    while len(centers) < count:
        placed = False
        for _ in range(PLACEMENT_TRIES):
            direction = rng.standard_normal(dim)
            norm = np.linalg.norm(direction)
            if norm == 0:
                continue
            candidate = direction / norm * radius * rng.random() ** (1.0 / dim)
            if all(np.linalg.norm(candidate - c) >= separation for c in centers):
                centers.append(candidate)
                placed = True
                break
        if not placed:
            radius *= RADIUS_GROWTH
    return np.array(centers)


def _track_layout(config: SynthConfig, rng: np.random.Generator):
    """Manifest records: image 0 of each identity is the query, the rest form camera-bound tracks"""
    records = []
    next_track = 0
    for identity in range(config.num_identities):
        query_camera = identity % config.num_cameras
        records.append(ItemRecord(f"id{identity:04d}_img000", identity, query_camera, None, "query"))
        gallery = list(range(1, config.images_per_identity))
        for start in range(0, len(gallery), config.track_len):
            camera = int(rng.integers(config.num_cameras))
            for image in gallery[start:start + config.track_len]:
                records.append(ItemRecord(
                    f"id{identity:04d}_img{image:03d}", identity, camera, next_track, "gallery"
                ))
            next_track += 1
    return records


def generate(config: SynthConfig) -> ReidDataset:
    """Deterministic dataset (manifest, embeddings, metadata) for a configuration"""
    config.validate()
    rng = np.random.Generator(np.random.PCG64(config.seed))

    centers = place_centers(rng, config.num_identities, config.dim, config.inter_sep)
    per_identity = config.images_per_identity
    identities = np.repeat(np.arange(config.num_identities), per_identity)
    noise = rng.standard_normal((identities.size, config.dim))
    embeddings = centers[identities] + config.intra_sigma * noise

    records = _track_layout(config, rng)

    meta = MetadataFeatureSet()
    prototypes = {
        name: rng.standard_normal((fam.classes, fam.dim)) * config.inter_sep
        for name, fam in sorted(config.meta_families.items())
    }
    assignment = {
        name: rng.integers(fam.classes, size=config.num_identities)
        for name, fam in sorted(config.meta_families.items())
    }
    for name, fam in sorted(config.meta_families.items()):
        signal = prototypes[name][assignment[name][identities]]
        meta_noise = rng.standard_normal((identities.size, fam.dim)) * config.inter_sep
        meta.families[name] = config.meta_fidelity * signal + (1 - config.meta_fidelity) * meta_noise

    return ReidDataset(ItemManifest(tuple(records)), embeddings, meta)


def config_from_dict(data: Dict) -> SynthConfig:
    data = dict(data)
    families = data.pop("meta_families", None)
    try:
        config = SynthConfig(**data)
        if families is not None:
            config.meta_families = {name: MetaFamily(**fam) for name, fam in families.items()}
    except (TypeError, AttributeError) as e:
        raise ConfigInvalid(f"bad synth configuration: {e}") from e
    return config


def write_synth_dataset(config: SynthConfig, out_dir: str, dataset: Optional[ReidDataset] = None) -> List[str]:
    """Generate (unless given) and write a dataset directory plus synth_config.json"""
    dataset = dataset if dataset is not None else generate(config)
    written = write_dataset_dir(dataset, out_dir)
    config_path = os.path.join(out_dir, "synth_config.json")
    try:
        with open(config_path, 'w') as f:
            json.dump(config.to_dict(), f, indent=2)
    except OSError as e:
        raise IoFailure(f"Could not write {config_path}: {e}") from e
    return written + [config_path]


if __name__ == "__main__":
    dataset = generate(SynthConfig())
    print(f"🧪 {len(dataset.manifest)} items, embeddings {dataset.embeddings.shape}, "
          f"metadata {dataset.meta.names()}")
    print(f"📊 queries: {len(dataset.manifest.subset('query'))}, gallery: {len(dataset.manifest.subset('gallery'))}")

#!/usr/bin/env python3
"""
Run manifest - records what a pipeline run used and produced
Resolved parameters, executed stages, SHA-256 of every input and output artifact and the headline metrics
"""

import hashlib
import json
import os
from datetime import datetime
from typing import Dict, List, Optional

import pytz

from reid_errors import IoFailure, MissingFile

TOOL_VERSION = "1.0.0"
MANIFEST_FILE = "run_manifest.json"
HASH_CHUNK = 1 << 20


def utc_timestamp() -> str:
    return datetime.now(pytz.utc).strftime('%Y-%m-%dT%H:%M:%SZ')


def file_sha256(path: str) -> str:
    if not os.path.isfile(path):
        raise MissingFile(path)
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(HASH_CHUNK), b''):
            digest.update(chunk)
    return digest.hexdigest()


class RunManifest:
    def __init__(self, command: str, config: Dict):
        self.command = command
        self.config = dict(config)
        self.started = utc_timestamp()
        self.stages: List[str] = []
        self.inputs: Dict[str, str] = {}
        self.outputs: Dict[str, str] = {}
        self.metrics: Dict[str, Optional[float]] = {}

    def add_stage(self, name: str):
        self.stages.append(name)

    def add_input(self, path: str):
        self.inputs[path] = file_sha256(path)

    def add_output(self, path: str):
        self.outputs[path] = file_sha256(path)

    def record_metric(self, name: str, value: Optional[float]):
        self.metrics[name] = value

    def to_dict(self) -> Dict:
        return {
            'tool_version': TOOL_VERSION,
            'command': self.command,
            'started_utc': self.started,
            'finished_utc': utc_timestamp(),
            'config': self.config,
            'stages': list(self.stages),
            'inputs': dict(sorted(self.inputs.items())),
            'outputs': dict(sorted(self.outputs.items())),
            'metrics': dict(self.metrics),
        }

    def save(self, path: str):
        """Write the manifest as indented JSON"""
        try:
            with open(path, 'w') as f:
                json.dump(self.to_dict(), f, indent=2)
        except OSError as e:
            raise IoFailure(f"Could not save run manifest {path}: {e}") from e


def load_run_manifest(path: str) -> Dict:
    if not os.path.isfile(path):
        raise MissingFile(path)
    with open(path, 'r') as f:
        return json.load(f)


if __name__ == "__main__":
    manifest = RunManifest("demo", {'k1': 20, 'k2': 6, 'lambda': 0.3})
    manifest.add_stage("dist")
    manifest.record_metric("baseline_map", 0.5)
    print(json.dumps(manifest.to_dict(), indent=2))

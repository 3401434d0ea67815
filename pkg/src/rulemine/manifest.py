"""Run manifests: enough to reproduce any command bit-identically.

A manifest snapshots the resolved configuration, fingerprints of every
input, and sha256 hashes of every artifact the command wrote. Durations and
the creation timestamp live here and only here; artifact files stay free of
wall-clock data so a rerun compares byte for byte.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Mapping, Union

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = 1


def file_sha256(path: Union[str, Path]) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    durations: dict = field(default_factory=dict)
    versions: dict = field(default_factory=dict)
    created: str = ""

    def add_input(self, path: Union[str, Path]) -> None:
        self.inputs[str(path)] = file_sha256(path)

    def add_artifacts(self, out_dir: Union[str, Path]) -> None:
        """Hash every file under ``out_dir`` except the manifest itself."""
        out = Path(out_dir)
        for p in sorted(out.rglob("*")):
            if p.is_file() and p.name != MANIFEST_NAME:
                self.artifacts[str(p.relative_to(out))] = file_sha256(p)

    def write(self, out_dir: Union[str, Path]) -> Path:
        import rulemine

        self.versions.setdefault("rulemine", rulemine.__version__)
        self.versions.setdefault("manifest-format", str(MANIFEST_FORMAT))
        if not self.created:
            self.created = datetime.now(timezone.utc).isoformat()
        path = Path(out_dir) / MANIFEST_NAME
        payload = {
            "command": self.command,
            "config": self.config,
            "inputs": self.inputs,
            "artifacts": self.artifacts,
            "durations": self.durations,
            "versions": self.versions,
            "created": self.created,
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        return path


def read_manifest(path: Union[str, Path]) -> dict:
    data = json.loads(Path(path).read_text())
    for key in ("command", "config", "artifacts"):
        if key not in data:
            raise ValueError(f"{path}: not a run manifest (missing {key!r})")
    return data


def compare_artifacts(manifest: Mapping, out_dir: Union[str, Path]) -> dict[str, bool]:
    """Recorded hash vs fresh hash for every artifact; True means identical."""
    out = Path(out_dir)
    result: dict[str, bool] = {}
    for rel, recorded in sorted(manifest["artifacts"].items()):
        p = out / rel
        result[rel] = p.is_file() and file_sha256(p) == recorded
    return result

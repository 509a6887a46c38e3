"""Content-hashed artifact manifest for one output directory."""
from __future__ import annotations

import json
from pathlib import Path

from .config import file_hash

MANIFEST = "manifest.json"


class StageMissingError(RuntimeError):
    def __init__(self, stage: str, needed_by: str):
        super().__init__(f"{needed_by} requires stage {stage}: run `swingintent {stage}` first")
        self.stage = stage


class Manifest:
    """``{"config_hash", "seed", "stages": {name: {"key", "outputs": {rel: sha256}}}}``."""

    def __init__(self, out: Path):
        self.out = Path(out)
        self.path = self.out / MANIFEST
        self.data = json.loads(self.path.read_text()) if self.path.exists() else {"stages": {}}

    def save(self):
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    def entry(self, stage: str) -> dict | None:
        return self.data["stages"].get(stage)

    def intact(self, stage: str) -> bool:
        e = self.entry(stage)
        if e is None:
            return False
        for rel, digest in e["outputs"].items():
            p = self.out / rel
            if not p.exists() or file_hash(p) != digest:
                return False
        return True

    def require(self, stage: str, needed_by: str) -> dict:
        if not self.intact(stage):
            raise StageMissingError(stage, needed_by)
        return self.entry(stage)

    def record(self, stage: str, key: str, outputs):
        self.data["stages"][stage] = {
            "key": key,
            "outputs": {str(Path(p).relative_to(self.out)): file_hash(p) for p in sorted(map(str, outputs))},
        }
        self.save()

    def artifact_hashes(self) -> dict:
        return {f"{s}/{rel}": h for s, e in sorted(self.data["stages"].items()) for rel, h in sorted(e["outputs"].items())}

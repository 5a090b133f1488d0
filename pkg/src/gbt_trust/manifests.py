"""Run manifests and artifact file conventions.

Every artifact-producing command writes exactly one manifest next to its
outputs: a JSON document with a fixed field order recording the command
line, seeds, input digests, the resolved configuration, and the artifact
paths with their digests. Artifacts themselves never embed timestamps, so
a rerun with the same inputs and seeds reproduces them byte for byte; the
timestamp lives only here.
"""
from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .rng import PRNG_TAG

MANIFEST_FORMAT = "gbt-trust/manifest/1"
MANIFEST_SUFFIX = ".manifest.json"


def sha256_of_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def sha256_of_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def dump_json(doc: dict) -> str:
    return json.dumps(doc, indent=1, ensure_ascii=False) + "\n"


def write_json(path, doc: dict) -> None:
    Path(path).write_text(dump_json(doc), encoding="utf-8")


def read_json(path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def write_manifest(
    out_dir,
    command: str,
    argv: list[str],
    seeds: dict,
    inputs: list[str],
    config: dict,
    artifacts: list[str],
    stem: str,
    extra: dict | None = None,
) -> Path:
    doc = {
        "format": MANIFEST_FORMAT,
        "command": command,
        "argv": list(argv),
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "tool_version": __version__,
        "prng": PRNG_TAG,
        "seeds": seeds,
        "inputs": [
            {"path": str(p), "sha256": sha256_of_file(p)} for p in inputs
        ],
        "config": config,
        "artifacts": [
            {"path": str(p), "sha256": sha256_of_file(p)} for p in artifacts
        ],
    }
    if extra:
        doc.update(extra)
    path = Path(out_dir) / f"{stem}{MANIFEST_SUFFIX}"
    write_json(path, doc)
    return path


def find_manifests(directory) -> list[Path]:
    return sorted(Path(directory).glob(f"*{MANIFEST_SUFFIX}"))

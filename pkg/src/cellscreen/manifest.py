"""Run manifests: a reproducibility record emitted next to every run's outputs.

The config hash and input hashes are pure functions of their content, so two
runs of the same (config, inputs, seed) produce identical hash fields; the
wall-time field is the only entry that varies between reruns.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__


def config_hash(config: Mapping) -> str:
    """SHA-256 over the canonical (sorted-key, compact) JSON encoding."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def file_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    out_path: str | Path,
    command: str,
    config: Mapping,
    seed: int,
    input_paths: Mapping[str, str | Path],
    warnings: Sequence[str],
    wall_time_seconds: float,
) -> dict:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "seed": seed,
        "config_hash": config_hash(config),
        "input_hashes": {
            name: file_hash(path) for name, path in sorted(input_paths.items())
        },
        "warnings": list(warnings),
        "wall_time_seconds": wall_time_seconds,
    }
    Path(out_path).write_text(
        json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8"
    )
    return manifest


def load_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))

"""Provenance manifests written next to every artifact."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__
from .errors import IoFailure


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for block in iter(lambda: fh.read(1 << 20), b""):
                h.update(block)
    except OSError as exc:
        raise IoFailure(str(exc)) from exc
    return h.hexdigest()


def _entries(paths: dict) -> dict:
    # basenames only, so manifests do not depend on the working directory
    return {
        role: {"file": Path(p).name, "sha256": file_sha256(p)}
        for role, p in sorted(paths.items()) if p is not None
    }


def build_manifest(command: str, inputs: dict, outputs: dict, config: dict,
                   seed: int | None = None, **extra) -> dict:
    """Manifest dict: tool version, command, config echo, seed and hashed files.

    No timestamps or host details go in, so identical runs give identical bytes.
    """
    doc = {
        "tool": "hyperfuse",
        "version": __version__,
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": _entries(inputs),
        "outputs": _entries(outputs),
    }
    doc.update(extra)
    return doc


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_manifest(doc: dict, path: str | Path) -> None:
    try:
        Path(path).write_text(dumps(doc), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(str(exc)) from exc


def read_manifest(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoFailure(str(exc)) from exc

"""Artifact manifest: relative workspace paths mapped to SHA-256 digests."""

from __future__ import annotations

import hashlib
import json
import logging
from collections.abc import Iterable
from pathlib import Path
from typing import Any

from ..config import get_workspace_dir
from ..errors import ManifestError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def get_manifest_file() -> Path:
    return get_workspace_dir() / MANIFEST_NAME


def file_digest(path: Path) -> str:
    with open(path, "rb") as f:
        return hashlib.file_digest(f, "sha256").hexdigest()


def load_manifest() -> dict[str, str]:
    manifest_file = get_manifest_file()
    if manifest_file.exists():
        with open(manifest_file, encoding="utf-8") as f:
            return json.load(f)
    return {}


def _save_manifest(manifest: dict[str, str]) -> None:
    manifest_file = get_manifest_file()
    manifest_file.parent.mkdir(parents=True, exist_ok=True)
    with open(manifest_file, "w", encoding="utf-8") as f:
        json.dump(dict(sorted(manifest.items())), f, indent=2)


def _relative(path: Path) -> str:
    root = get_workspace_dir().resolve()
    try:
        return path.resolve().relative_to(root).as_posix()
    except ValueError:
        raise ManifestError(f"{path} is outside the workspace {root}") from None


def record_artifacts(paths: Iterable[Path]) -> dict[str, str]:
    """
    Hash each artifact and store it in the manifest.

    Returns:
        The recorded entries (relative path -> digest).
    """
    manifest = load_manifest()
    recorded = {}
    for path in paths:
        if not path.exists():
            raise ManifestError(f"Artifact {path} does not exist")
        recorded[_relative(path)] = file_digest(path)
    manifest.update(recorded)
    _save_manifest(manifest)
    logger.debug(f"Recorded {len(recorded)} artifacts in {get_manifest_file()}")
    return recorded


def verify_workspace() -> dict[str, Any]:
    """
    Check every manifest entry against the file on disk.

    Returns:
        Dict with ok flag, checked count, and missing / tampered paths.
    """
    root = get_workspace_dir()
    missing, tampered = [], []
    manifest = load_manifest()
    for relative, digest in manifest.items():
        path = root / relative
        if not path.exists():
            missing.append(relative)
        elif file_digest(path) != digest:
            tampered.append(relative)
    if missing or tampered:
        logger.warning(f"Workspace check: {len(missing)} missing, {len(tampered)} tampered")
    return {
        "ok": not missing and not tampered,
        "checked": len(manifest),
        "missing": missing,
        "tampered": tampered,
    }

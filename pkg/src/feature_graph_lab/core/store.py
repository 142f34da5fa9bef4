"""Append-only run-record store keyed by content hash."""

from __future__ import annotations

import json
import logging
import threading
from collections.abc import Iterator
from pathlib import Path
from typing import Any

from pydantic import ValidationError

from ..config import get_runs_dir
from ..models import GnnConfig, RunRecord, RunStatus, SyntheticSpec, short_hash

logger = logging.getLogger(__name__)

CELL_KEY_LENGTH = 16


def cell_key(dataset: SyntheticSpec, graph_id: str, config: GnnConfig, seed: int) -> str:
    """Hash of (dataset key, graph id, model config, seed); identical cells share a key."""
    payload = {
        "dataset": dataset.key,
        "graph": graph_id,
        "config": config.model_dump(mode="json"),
        "seed": seed,
    }
    return short_hash(payload, CELL_KEY_LENGTH)


def store_path(plan_name: str) -> Path:
    """Default store location for a plan: ``<runs>/<plan>.jsonl``."""
    return get_runs_dir() / f"{plan_name}.jsonl"


class RecordStore:
    """
    JSON-lines file of RunRecords, one per line.

    The cell-key index is rebuilt from the file on open; a truncated last
    line (interrupted write) is skipped with a warning. Appends are
    serialized by a lock and flushed per record.
    """

    def __init__(self, path: Path):
        self.path = path
        self._lock = threading.Lock()
        self._records: dict[str, RunRecord] = {}
        self._load()

    def _load(self) -> None:
        if not self.path.exists():
            return
        with open(self.path, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                try:
                    record = RunRecord(**json.loads(line))
                except (json.JSONDecodeError, ValidationError) as e:
                    logger.warning(f"Skipping unreadable record at {self.path}:{lineno}: {e}")
                    continue
                self._records[record.cell_key] = record
        logger.debug(f"Loaded {len(self._records)} records from {self.path}")

    def __contains__(self, key: str) -> bool:
        return key in self._records

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[RunRecord]:
        return iter(self._records.values())

    def get(self, key: str) -> RunRecord | None:
        return self._records.get(key)

    def append(self, record: RunRecord) -> None:
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(record.model_dump_json() + "\n")
                f.flush()
            self._records[record.cell_key] = record

    def records(self, status: RunStatus | None = None) -> list[RunRecord]:
        return [r for r in self._records.values() if status is None or r.status == status]

    def summary(self) -> dict[str, Any]:
        counts = {status.value: 0 for status in RunStatus}
        for record in self._records.values():
            counts[record.status.value] += 1
        return {"path": str(self.path), "records": len(self._records), **counts}


def load_records(path: Path) -> list[RunRecord]:
    """Read every record of a store file (missing file -> empty list)."""
    return RecordStore(path).records()

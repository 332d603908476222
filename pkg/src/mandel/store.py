"""Append-only persistence: idea pool, run transcripts, designs, ledger.

Everything is one JSON object per line, UTF-8, human-greppable and
crash-tolerant: reloading a file always reproduces exactly the sum of
appends.  Layout under a campaign root:

    pool.jsonl              idea pool, one entry per fully accepted idea
    runs/<run_id>.jsonl     every raw turn + its parsed envelope or error
    designs/<idea_id>/      final config, outcome, copied artifacts
    ledger.jsonl            one summary record per terminated run

A store instance is the single writer for its files; appends are
serialized through per-file locks.  Timestamps are supplied by the
engine (ISO-8601 UTC), never invented here, so deterministic campaigns
produce byte-identical files.
"""

from __future__ import annotations

import json
import os
import shutil
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable

from .configschema import DesignConfig, render_config


class StorageError(Exception):
    pass


class CatalogFormatError(StorageError):
    def __init__(self, path: str, record_no: int, detail: str):
        self.record_no = record_no
        super().__init__(f"{path}:{record_no}: {detail}")


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    description: str


@dataclass(frozen=True)
class PublishedCatalog:
    entries: tuple[CatalogEntry, ...]

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)


def load_published_catalog(path: str | Path) -> PublishedCatalog:
    """Catalogue of previously implemented targets; names must be unique."""
    return catalog_from_text(Path(path).read_text(encoding="utf-8"), source=str(path))


def catalog_from_text(text: str, source: str = "<catalog>") -> PublishedCatalog:
    entries: list[CatalogEntry] = []
    seen: set[str] = set()
    path = source
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except ValueError as exc:
            raise CatalogFormatError(str(path), line_no, f"not valid JSON: {exc}") from exc
        if not isinstance(doc, dict) or "name" not in doc or "description" not in doc:
            raise CatalogFormatError(str(path), line_no, "record needs name and description")
        name = str(doc["name"])
        if name in seen:
            raise CatalogFormatError(str(path), line_no, f"duplicate name {name!r}")
        seen.add(name)
        entries.append(CatalogEntry(name=name, description=str(doc["description"])))
    return PublishedCatalog(entries=tuple(entries))


def _append_line(path: Path, record: dict[str, Any], lock: threading.Lock) -> None:
    line = json.dumps(record, ensure_ascii=False) + "\n"
    with lock:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a", encoding="utf-8") as f:
            f.write(line)
            f.flush()
            os.fsync(f.fileno())


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        return []
    out: list[dict[str, Any]] = []
    for line_no, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            out.append(json.loads(line))
        except ValueError as exc:
            raise StorageError(f"{path}:{line_no}: corrupt record: {exc}") from exc
    return out


def idea_to_record(idea) -> dict[str, Any]:
    # fixed key order keeps deterministic campaigns byte-identical
    return {
        "id": idea.id,
        "title": idea.title,
        "abstract": idea.abstract,
        "target_description": idea.target_description,
        "concept_a": idea.concepts.concept_a,
        "concept_b": idea.concepts.concept_b,
        "concept_source": idea.concepts.source_id,
        "run_id": idea.run_id,
        "created_at": idea.created_at,
    }


@dataclass(frozen=True)
class IdeaPoolEntry:
    seq: int
    record: dict[str, Any]


class IdeaPool:
    """Durable append-only idea pool with gap-free sequence numbers."""

    def __init__(self, path: str | Path):
        self._path = Path(path)
        self._lock = threading.Lock()
        self._entries: list[IdeaPoolEntry] = []
        for doc in read_jsonl(self._path):
            seq = doc.pop("seq")
            self._entries.append(IdeaPoolEntry(seq=seq, record=doc))
        for i, entry in enumerate(self._entries, start=1):
            if entry.seq != i:
                raise StorageError(
                    f"{self._path}: sequence gap, expected {i} got {entry.seq}"
                )

    @property
    def path(self) -> Path:
        return self._path

    def __len__(self) -> int:
        return len(self._entries)

    def append(self, idea) -> int:
        record = idea_to_record(idea)
        with self._lock:
            seq = len(self._entries) + 1
            on_disk = {"seq": seq, **record}
            self._path.parent.mkdir(parents=True, exist_ok=True)
            with open(self._path, "a", encoding="utf-8") as f:
                f.write(json.dumps(on_disk, ensure_ascii=False) + "\n")
                f.flush()
                os.fsync(f.fileno())
            self._entries.append(IdeaPoolEntry(seq=seq, record=record))
            return seq

    def entries(self) -> list[IdeaPoolEntry]:
        with self._lock:
            return list(self._entries)

    def abstracts(self) -> list[tuple[str, str]]:
        """(title, abstract) pairs, pool order; the novelty comparison corpus."""
        return [(e.record["title"], e.record["abstract"]) for e in self.entries()]


@dataclass(frozen=True)
class DesignArtifact:
    """Stored result of a successful implementation."""

    idea_id: str
    config: DesignConfig
    message: str
    artifact_paths: tuple[str, ...]
    attempts: int


class Store:
    """Campaign root: pool + run logs + designs + ledger."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.pool = IdeaPool(self.root / "pool.jsonl")
        self._ledger_lock = threading.Lock()
        self._run_locks: dict[str, threading.Lock] = {}
        self._run_locks_guard = threading.Lock()

    @property
    def ledger_path(self) -> Path:
        return self.root / "ledger.jsonl"

    def _run_lock(self, run_id: str) -> threading.Lock:
        with self._run_locks_guard:
            return self._run_locks.setdefault(run_id, threading.Lock())

    def run_log_path(self, run_id: str) -> Path:
        return self.root / "runs" / f"{run_id}.jsonl"

    def append_run_log(self, run_id: str, records: Iterable[dict[str, Any]]) -> Path:
        path = self.run_log_path(run_id)
        lock = self._run_lock(run_id)
        for record in records:
            _append_line(path, record, lock)
        return path

    def append_ledger_entry(self, record: dict[str, Any]) -> None:
        _append_line(self.ledger_path, record, self._ledger_lock)

    def read_ledger(self) -> list[dict[str, Any]]:
        return read_jsonl(self.ledger_path)

    def store_design(self, artifact: DesignArtifact) -> Path:
        """Persist a successful design: config + outcome + artifact copies."""
        design_dir = self.root / "designs" / artifact.idea_id
        design_dir.mkdir(parents=True, exist_ok=True)
        (design_dir / "config.json").write_text(
            render_config(artifact.config), encoding="utf-8"
        )
        stored: list[str] = []
        for src in artifact.artifact_paths:
            src_path = Path(src)
            dest = design_dir / src_path.name
            if src_path.exists():
                shutil.copyfile(src_path, dest)
            stored.append(dest.name)
        outcome = {
            "idea_id": artifact.idea_id,
            "message": artifact.message,
            "attempts": artifact.attempts,
            "artifacts": stored,
        }
        (design_dir / "outcome.json").write_text(
            json.dumps(outcome, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )
        return design_dir


def transcript_records(transcript) -> list[dict[str, Any]]:
    """Serialize transcript entries (role, raw, envelope-or-error) for a run log."""
    records = []
    for i, entry in enumerate(transcript):
        env = entry.envelope
        records.append(
            {
                "type": "turn",
                "seq": i,
                "role": entry.role.value,
                "raw": entry.raw,
                "thought": env.thought if env else None,
                "action": env.action if env else None,
                "action_input": env.action_input if env else None,
                "error": entry.error,
            }
        )
    return records

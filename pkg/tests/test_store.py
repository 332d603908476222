"""Store tests: append-only semantics, crash recovery, concurrency."""

import json
import threading

import pytest

from mandel.agents import ConceptPair, Idea
from mandel.configschema import load_fixture
from mandel.store import (
    CatalogFormatError,
    DesignArtifact,
    IdeaPool,
    StorageError,
    Store,
    load_published_catalog,
    read_jsonl,
)


def make_idea(n: int, run_id: str = "run-0001") -> Idea:
    return Idea(
        id=f"{run_id}-idea-{n}",
        title=f"Idea number {n}",
        abstract=f"Abstract text {n}.",
        target_description=f"Target description {n}\nwith details.",
        concepts=ConceptPair("swapping", "logical qubits"),
        run_id=run_id,
        created_at="2025-01-01T00:00:00+00:00",
    )


class TestIdeaPool:
    def test_first_append_returns_one(self, tmp_path):
        pool = IdeaPool(tmp_path / "pool.jsonl")
        assert pool.append(make_idea(1)) == 1
        assert pool.append(make_idea(2)) == 2

    def test_reload_reproduces_pool(self, tmp_path):
        path = tmp_path / "pool.jsonl"
        pool = IdeaPool(path)
        for i in range(5):
            pool.append(make_idea(i + 1))
        # simulate a crash: re-open from the file alone
        recovered = IdeaPool(path)
        assert len(recovered) == 5
        assert [e.seq for e in recovered.entries()] == [1, 2, 3, 4, 5]
        assert recovered.entries() == pool.entries()

    def test_sequence_gap_detected_on_load(self, tmp_path):
        path = tmp_path / "pool.jsonl"
        record = {"seq": 2, "id": "x", "title": "t", "abstract": "a",
                  "target_description": "d", "concept_a": "p", "concept_b": "q",
                  "concept_source": "", "run_id": "r", "created_at": "now"}
        path.write_text(json.dumps(record) + "\n")
        with pytest.raises(StorageError):
            IdeaPool(path)

    def test_concurrent_appends_lose_nothing(self, tmp_path):
        pool = IdeaPool(tmp_path / "pool.jsonl")
        per_thread = 50

        def worker(tag):
            for i in range(per_thread):
                pool.append(make_idea(i, run_id=f"run-{tag}"))

        threads = [threading.Thread(target=worker, args=(t,)) for t in range(2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert len(pool) == 100
        reloaded = IdeaPool(tmp_path / "pool.jsonl")
        assert [e.seq for e in reloaded.entries()] == list(range(1, 101))

    def test_abstracts_view(self, tmp_path):
        pool = IdeaPool(tmp_path / "pool.jsonl")
        pool.append(make_idea(1))
        assert pool.abstracts() == [("Idea number 1", "Abstract text 1.")]

    def test_large_pool_lists_in_order(self, tmp_path):
        pool = IdeaPool(tmp_path / "pool.jsonl")
        for i in range(187):
            pool.append(make_idea(i))
        entries = pool.entries()
        assert len(entries) == 187
        assert [e.seq for e in entries] == list(range(1, 188))


class TestCatalog:
    def test_load(self, tmp_path):
        path = tmp_path / "catalog.jsonl"
        path.write_text(
            '{"name": "bell_swap", "description": "swapping"}\n'
            '{"name": "w4", "description": "W state"}\n'
        )
        catalog = load_published_catalog(path)
        assert len(catalog) == 2
        assert catalog.entries[0].name == "bell_swap"

    def test_duplicate_name_rejected_with_record_number(self, tmp_path):
        path = tmp_path / "catalog.jsonl"
        path.write_text(
            '{"name": "dup", "description": "one"}\n{"name": "dup", "description": "two"}\n'
        )
        with pytest.raises(CatalogFormatError) as exc_info:
            load_published_catalog(path)
        assert exc_info.value.record_no == 2


class TestStore:
    def test_run_log_and_ledger_roundtrip(self, tmp_path):
        store = Store(tmp_path / "campaign")
        store.append_run_log("run-0001", [{"type": "turn", "seq": 0, "role": "researcher"}])
        store.append_ledger_entry({"type": "idea_run", "run_id": "run-0001", "outcome": "FullReject"})
        assert read_jsonl(store.run_log_path("run-0001"))[0]["role"] == "researcher"
        assert store.read_ledger()[0]["outcome"] == "FullReject"

    def test_store_design_copies_artifacts(self, tmp_path):
        store = Store(tmp_path / "campaign")
        artifact_file = tmp_path / "best_solution.json"
        artifact_file.write_text('{"config_digest": "abc"}\n')
        design_dir = store.store_design(
            DesignArtifact(
                idea_id="run-0001-idea-2",
                config=load_fixture("remote_swap"),
                message="stub run complete",
                artifact_paths=(str(artifact_file),),
                attempts=2,
            )
        )
        assert (design_dir / "config.json").exists()
        assert (design_dir / "best_solution.json").exists()
        outcome = json.loads((design_dir / "outcome.json").read_text())
        assert outcome["attempts"] == 2
        # stored paths resolve to existing files
        for name in outcome["artifacts"]:
            assert (design_dir / name).exists()

    def test_append_only_rereads_equal_sum_of_appends(self, tmp_path):
        store = Store(tmp_path / "campaign")
        records = [{"type": "idea_run", "run_id": f"run-{i:04d}"} for i in range(10)]
        for rec in records:
            store.append_ledger_entry(rec)
        assert store.read_ledger() == records

"""Operator CLI: campaigns, implementations, validation, reports, replays.

Exit codes are a stable scripting contract: 0 success, 1 domain failure
(validation error, transcript mismatch, aborted run), 2 usage error.
All commands honor --seed and are fully deterministic under the replay
backend with the stub tool: run ids, idea ids, and timestamps are all
derived from counters, never from wall clocks or process state.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields as dc_fields
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

from . import analytics
from .agents import (
    AgentError,
    ConceptPair,
    DEFAULT_MODEL,
    FULL_ACCEPT,
    Idea,
    IdeaRun,
    ImplementationRecord,
    LiveClock,
    RolePrompts,
    RunLimits,
    TickClock,
    default_limitations,
    default_prompts,
    default_tool_docs,
    idea_from_pool_record,
    run_idea_generation,
    run_implementation,
)
from .configschema import ConfigError, parse_config, validate_config
from .literature import ArxivClient, Corpus, Literature, TransportError, corpus_from_text, load_corpus
from .llmbackend import LiveBackend, ReplayBackend, load_script
from .protocol import Role
from .store import (
    DesignArtifact,
    PublishedCatalog,
    Store,
    catalog_from_text,
    load_published_catalog,
    read_jsonl,
    transcript_records,
)
from .toolrunner import RealTool, StubTool

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2

API_KEY_ENV = "MANDEL_API_KEY"


@dataclass
class CampaignSettings:
    """Engine knobs; file values are overridden by CLI flags."""

    store_root: str = "campaign"
    backend: str = "replay"  # live | replay | stub-embed
    script: str | None = None
    tool: str = "stub"  # real | stub
    bridge_cmd: list[str] = field(default_factory=list)
    model: str = DEFAULT_MODEL
    temperature: float = 1.0
    endpoint: str = "https://api.openai.com/v1/chat/completions"
    embed_endpoint: str = "https://api.openai.com/v1/embeddings"
    embed_model: str = "text-embedding-3-large"
    seed: int = 0
    variant: str = "main"
    parallel: int = 1
    tool_timeout: float = 600.0
    max_novelty_rounds: int = 5
    max_judge_rounds: int = 5
    max_arxiv_queries: int = 5
    retry_cap: int = 10
    mediator_period: int = 3
    corpus_path: str | None = None
    pairs_path: str | None = None
    catalog_path: str | None = None
    concepts_path: str | None = None
    arxiv_fixture: str | None = None
    tool_docs_path: str | None = None
    limitations_path: str | None = None
    researcher_prompt: str | None = None
    novelty_prompt: str | None = None
    judge_prompt: str | None = None
    mediator_prompt: str | None = None
    expert_prompt: str | None = None

    def limits(self) -> RunLimits:
        return RunLimits(
            max_novelty_rounds=self.max_novelty_rounds,
            max_judge_rounds=self.max_judge_rounds,
            max_arxiv_queries=self.max_arxiv_queries,
            retry_cap=self.retry_cap,
            mediator_period=self.mediator_period,
        )


def load_settings(path: str | Path | None) -> CampaignSettings:
    settings = CampaignSettings()
    if path is None:
        return settings
    path = Path(path)
    doc = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: campaign config must be a JSON object")
    known = {f.name for f in dc_fields(CampaignSettings)}
    for key, value in doc.items():
        if key not in known:
            raise ValueError(f"{path}: unknown setting {key!r}")
        setattr(settings, key, value)
    base = path.parent
    for name in (
        "corpus_path", "pairs_path", "catalog_path", "concepts_path", "arxiv_fixture",
        "tool_docs_path", "limitations_path", "researcher_prompt", "novelty_prompt",
        "judge_prompt", "mediator_prompt", "expert_prompt", "script", "store_root",
    ):
        value = getattr(settings, name)
        if value is not None and not Path(value).is_absolute():
            setattr(settings, name, str(base / value))
    settings.limits()  # validates caps
    return settings


def _read_text(path: str | None, fallback) -> str:
    if path is None:
        return fallback()
    return Path(path).read_text(encoding="utf-8")


def _load_prompts(settings: CampaignSettings) -> RolePrompts:
    defaults = default_prompts()
    return RolePrompts(
        researcher=_read_text(settings.researcher_prompt, lambda: defaults.researcher),
        novelty=_read_text(settings.novelty_prompt, lambda: defaults.novelty),
        judge=_read_text(settings.judge_prompt, lambda: defaults.judge),
        mediator=_read_text(settings.mediator_prompt, lambda: defaults.mediator),
        expert=_read_text(settings.expert_prompt, lambda: defaults.expert),
    )


def _load_pairs(settings: CampaignSettings) -> list[ConceptPair]:
    if settings.pairs_path is None:
        text = (resources.files("mandel") / "data" / "concept_pairs.jsonl").read_text(
            encoding="utf-8"
        )
        records = [json.loads(ln) for ln in text.splitlines() if ln.strip()]
    else:
        records = read_jsonl(settings.pairs_path)
    pairs = [
        ConceptPair(
            concept_a=r["concept_a"], concept_b=r["concept_b"], source_id=r.get("source_id", "")
        )
        for r in records
    ]
    if not pairs:
        raise ValueError("concept pair file contains no pairs")
    return pairs


def _load_corpus(settings: CampaignSettings) -> Corpus:
    if settings.corpus_path is not None:
        return load_corpus(settings.corpus_path)
    text = (resources.files("mandel") / "data" / "corpus.jsonl").read_text(encoding="utf-8")
    return corpus_from_text(text, source="mandel/data/corpus.jsonl")


def _load_catalog(settings: CampaignSettings) -> PublishedCatalog:
    if settings.catalog_path is not None:
        return load_published_catalog(settings.catalog_path)
    text = (resources.files("mandel") / "data" / "published_catalog.jsonl").read_text(
        encoding="utf-8"
    )
    return catalog_from_text(text, source="mandel/data/published_catalog.jsonl")


def _load_concepts(settings: CampaignSettings) -> list[str]:
    if settings.concepts_path is not None:
        text = Path(settings.concepts_path).read_text(encoding="utf-8")
    else:
        text = (resources.files("mandel") / "data" / "concepts.txt").read_text(encoding="utf-8")
    return [ln.strip() for ln in text.splitlines() if ln.strip()]


def _build_chat_backend(settings: CampaignSettings):
    if settings.backend == "live":
        return LiveBackend(
            endpoint=settings.endpoint, api_key=os.environ.get(API_KEY_ENV, "")
        )
    if settings.backend == "replay":
        if not settings.script:
            raise ValueError("replay backend requires a script path (--script or config)")
        return ReplayBackend(load_script(settings.script))
    if settings.backend == "stub-embed":
        return None  # offline embeddings only; no chat capability
    raise ValueError(f"unknown backend {settings.backend!r}")


def _build_literature(settings: CampaignSettings) -> Literature:
    corpus = _load_corpus(settings)
    if settings.backend == "live":
        client = ArxivClient()
    elif settings.arxiv_fixture:
        fixture_text = Path(settings.arxiv_fixture).read_text(encoding="utf-8")
        client = ArxivClient(fetch=lambda url, timeout: fixture_text, rate_limit_s=0.0)
    else:
        def _offline_fetch(url: str, timeout: float) -> str:
            raise TransportError("literature search is unavailable offline")

        client = ArxivClient(fetch=_offline_fetch, rate_limit_s=0.0)
    return Literature(corpus=corpus, client=client)


def _build_tool(settings: CampaignSettings):
    if settings.tool == "stub":
        return StubTool()
    if settings.tool == "real":
        if not settings.bridge_cmd:
            raise ValueError("real tool requires bridge_cmd in the campaign config")
        return RealTool(bridge_cmd=list(settings.bridge_cmd), timeout=settings.tool_timeout)
    raise ValueError(f"unknown tool {settings.tool!r}")


def _deterministic(settings: CampaignSettings) -> bool:
    return settings.backend != "live"


def _idea_run_ledger_record(settings: CampaignSettings, run: IdeaRun) -> dict[str, Any]:
    counts = run.call_counts()
    idea = run.idea
    return {
        "type": "idea_run",
        "run_id": run.run_id,
        "variant": settings.variant,
        "outcome": run.outcome,
        "proposals": run.iteration_count,
        "arxiv_queries": run.arxiv_queries_used,
        "researcher_calls": counts[Role.RESEARCHER],
        "novelty_calls": counts[Role.NOVELTY_SUPERVISOR],
        "judge_calls": counts[Role.JUDGE],
        "mediator_calls": counts[Role.MEDIATOR],
        "pool_seq": run.pool_seq,
        "idea_id": idea.id if idea else None,
        "title": idea.title if idea else None,
        "abstract": idea.abstract if idea else None,
        "target_description": idea.target_description if idea else None,
        "concept_a": run.pair.concept_a,
        "concept_b": run.pair.concept_b,
    }


def _implementation_ledger_record(
    settings: CampaignSettings, impl_id: str, record: ImplementationRecord, source_outcome: str
) -> dict[str, Any]:
    return {
        "type": "implementation",
        "run_id": impl_id,
        "variant": settings.variant,
        "idea_id": record.idea_id,
        "source_outcome": source_outcome,
        "expert_calls": record.expert_calls,
        "success": record.success,
    }


def _execute_idea_run(settings, backend, literature, store, catalog, pair, run_id, prompts,
                      tool_docs, limitations):
    rng = random.Random(f"{settings.seed}:{run_id}")
    clock = TickClock() if _deterministic(settings) else LiveClock()
    run = run_idea_generation(
        backend,
        literature,
        store.pool,
        catalog,
        pair,
        settings.limits(),
        rng,
        prompts=prompts,
        tool_docs=tool_docs,
        limitations=limitations,
        clock=clock,
        run_id=run_id,
        model=settings.model,
        temperature=settings.temperature,
    )
    ledger_record = _idea_run_ledger_record(settings, run)
    store.append_run_log(run_id, transcript_records(run.transcript) + [ledger_record])
    store.append_ledger_entry(ledger_record)
    return run


def cmd_run(settings: CampaignSettings, n_runs: int) -> int:
    """Execute idea-generation runs 1..n_runs, resuming past completions."""
    if n_runs < 0:
        print("error: number of runs must be >= 0", file=sys.stderr)
        return EXIT_USAGE
    store = Store(settings.store_root)
    backend = _build_chat_backend(settings)
    if backend is None:
        print("error: the run command needs a live or replay backend", file=sys.stderr)
        return EXIT_USAGE
    literature = _build_literature(settings)
    catalog = _load_catalog(settings)
    pairs = _load_pairs(settings)
    prompts = _load_prompts(settings)
    tool_docs = _read_text(settings.tool_docs_path, default_tool_docs)
    limitations = _read_text(settings.limitations_path, default_limitations)

    # only classified runs are final; aborted runs are retried on resume
    completed = {
        rec["run_id"] for rec in store.read_ledger() if rec.get("type") == "idea_run"
    }
    parallel = 1 if settings.backend == "replay" else max(1, settings.parallel)

    todo: list[tuple[str, ConceptPair]] = []
    for i in range(1, n_runs + 1):
        run_id = f"run-{i:04d}"
        if run_id in completed:
            continue
        todo.append((run_id, pairs[(i - 1) % len(pairs)]))

    failures = 0

    def one(item: tuple[str, ConceptPair]) -> None:
        nonlocal failures
        run_id, pair = item
        try:
            run = _execute_idea_run(
                settings, backend, literature, store, catalog, pair, run_id,
                prompts, tool_docs, limitations,
            )
            print(f"{run_id}: {run.outcome} after {run.iteration_count} proposal(s)")
        except AgentError as exc:
            failures += 1
            transcript = getattr(exc, "transcript", [])
            error_record = {"type": "idea_run_error", "run_id": run_id, "error": str(exc)}
            store.append_run_log(run_id, transcript_records(transcript) + [error_record])
            store.append_ledger_entry(error_record)
            print(f"{run_id}: aborted: {exc}", file=sys.stderr)

    if parallel == 1:
        for item in todo:
            one(item)
    else:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            list(pool.map(one, todo))

    print(f"campaign: {len(todo)} run(s) executed, {failures} aborted, pool size {len(store.pool)}")
    return EXIT_DOMAIN if failures else EXIT_OK


def _rejected_candidates(store: Store) -> list[tuple[Idea, str]]:
    out = []
    for rec in store.read_ledger():
        if rec.get("type") != "idea_run" or rec.get("outcome") == FULL_ACCEPT:
            continue
        if not rec.get("target_description"):
            continue
        idea = Idea(
            id=rec["idea_id"],
            title=rec["title"],
            abstract=rec["abstract"],
            target_description=rec["target_description"],
            concepts=ConceptPair(rec["concept_a"], rec["concept_b"]),
            run_id=rec["run_id"],
            created_at="",
        )
        out.append((idea, rec["outcome"]))
    return out


def cmd_implement(
    settings: CampaignSettings,
    idea_id: str | None = None,
    count: int = 1,
    ignore_rejections: bool = False,
) -> int:
    """Run the Expert loop on selected or randomly drawn ideas."""
    store = Store(settings.store_root)
    backend = _build_chat_backend(settings)
    if backend is None:
        print("error: the implement command needs a live or replay backend", file=sys.stderr)
        return EXIT_USAGE
    tool = _build_tool(settings)
    prompts = _load_prompts(settings)
    tool_docs = _read_text(settings.tool_docs_path, default_tool_docs)

    if ignore_rejections:
        candidates = _rejected_candidates(store)
    else:
        candidates = [
            (idea_from_pool_record(e.record), FULL_ACCEPT) for e in store.pool.entries()
        ]
    if idea_id is not None:
        candidates = [(idea, cls) for idea, cls in candidates if idea.id == idea_id]
        if not candidates:
            print(f"error: idea {idea_id!r} not found", file=sys.stderr)
            return EXIT_DOMAIN
        selected = candidates
    else:
        if not candidates:
            print("error: no eligible ideas to implement", file=sys.stderr)
            return EXIT_DOMAIN
        rng = random.Random(f"{settings.seed}:implement")
        k = min(count, len(candidates))
        selected = rng.sample(candidates, k)

    existing = sum(
        1 for rec in store.read_ledger() if rec.get("type") in ("implementation", "implementation_error")
    )
    aborted = 0

    def one(item: tuple[int, tuple[Idea, str]]) -> None:
        nonlocal aborted
        offset, (idea, source_outcome) = item
        impl_id = f"impl-{existing + offset + 1:04d}"
        workdir = store.root / "work" / impl_id
        try:
            record = run_implementation(
                idea, backend, tool, settings.retry_cap, workdir,
                prompts=prompts, tool_docs=tool_docs,
                model=settings.model, temperature=settings.temperature,
            )
        except AgentError as exc:
            aborted += 1
            transcript = getattr(exc, "transcript", [])
            error_record = {"type": "implementation_error", "run_id": impl_id, "error": str(exc)}
            store.append_run_log(impl_id, transcript_records(transcript) + [error_record])
            store.append_ledger_entry(error_record)
            print(f"{impl_id}: aborted: {exc}", file=sys.stderr)
            return
        ledger_record = _implementation_ledger_record(settings, impl_id, record, source_outcome)
        store.append_run_log(impl_id, transcript_records(record.transcript) + [ledger_record])
        store.append_ledger_entry(ledger_record)
        if record.success:
            final = record.attempts[-1]
            design_dir = store.store_design(
                DesignArtifact(
                    idea_id=idea.id,
                    config=final.config,
                    message=final.outcome.message,
                    artifact_paths=final.outcome.artifacts,
                    attempts=record.expert_calls,
                )
            )
            print(f"{impl_id}: success for {idea.id} after {record.expert_calls} attempt(s); stored {design_dir}")
        else:
            print(f"{impl_id}: unsuccessful for {idea.id} after {record.expert_calls} attempt(s)")

    parallel = 1 if settings.backend == "replay" else max(1, settings.parallel)
    items = list(enumerate(selected))
    if parallel == 1:
        for item in items:
            one(item)
    else:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            list(pool.map(one, items))
    return EXIT_DOMAIN if aborted else EXIT_OK


def cmd_validate(paths: Sequence[str]) -> int:
    """Batch-validate config files; exit 0 iff every file is valid."""
    all_ok = True
    for path in paths:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            print(f"[fail] {path}: unreadable: {exc}")
            all_ok = False
            continue
        try:
            cfg = parse_config(text)
        except ConfigError as exc:
            print(f"[fail] {path}: {exc}")
            all_ok = False
            continue
        report = validate_config(cfg)
        if report.errors:
            all_ok = False
            print(f"[fail] {path}: {len(report.errors)} error(s)")
            for finding in report.errors:
                print(f"    {finding.rule} at {finding.path}: {finding.message}")
        else:
            print(f"[ok] {path}")
        for finding in report.warnings:
            print(f"    warning: {finding.rule} at {finding.path}: {finding.message}")
    return EXIT_OK if all_ok else EXIT_DOMAIN


def cmd_report(settings: CampaignSettings, ledger_path: str, out_dir: str) -> int:
    """Emit the analytics bundle for a ledger."""
    ledger = analytics.load_ledger(ledger_path)
    concepts = _load_concepts(settings)
    if settings.backend == "live":
        embedder = analytics.HttpEmbedder(
            endpoint=settings.embed_endpoint,
            model=settings.embed_model,
            api_key=os.environ.get(API_KEY_ENV, ""),
        )
    else:
        embedder = analytics.OfflineEmbedder()
    payload = analytics.write_report(ledger, out_dir, concepts=concepts, embedder=embedder)
    print(
        f"report written to {out_dir}: {payload['runs']} runs, "
        f"{payload['implementations']} implementations"
    )
    return EXIT_OK


def cmd_replay(settings: CampaignSettings, script_path: str, expect_path: str | None) -> int:
    """Replay one recorded campaign run and check the transcript.

    Executes one idea-generation run (plus the implementation of the
    pooled idea, when accepted) against the script and the stub tool,
    writes transcript.jsonl under the store root, and compares it
    byte-for-byte against the expectation file when one is given.
    """
    settings.backend = "replay"
    settings.script = script_path
    settings.tool = "stub"
    settings.parallel = 1
    store = Store(settings.store_root)
    backend = _build_chat_backend(settings)
    literature = _build_literature(settings)
    catalog = _load_catalog(settings)
    pairs = _load_pairs(settings)
    prompts = _load_prompts(settings)
    tool_docs = _read_text(settings.tool_docs_path, default_tool_docs)
    limitations = _read_text(settings.limitations_path, default_limitations)

    records: list[dict[str, Any]] = []
    try:
        run = _execute_idea_run(
            settings, backend, literature, store, catalog, pairs[0], "run-0001",
            prompts, tool_docs, limitations,
        )
        records.extend(transcript_records(run.transcript))
        records.append(_idea_run_ledger_record(settings, run))
        print(f"run-0001: {run.outcome} after {run.iteration_count} proposal(s)")
        if run.outcome == FULL_ACCEPT:
            tool = _build_tool(settings)
            impl = run_implementation(
                run.idea, backend, tool, settings.retry_cap, store.root / "work" / "impl-0001",
                prompts=prompts, tool_docs=tool_docs,
                model=settings.model, temperature=settings.temperature,
            )
            impl_record = _implementation_ledger_record(settings, "impl-0001", impl, FULL_ACCEPT)
            store.append_run_log("impl-0001", transcript_records(impl.transcript) + [impl_record])
            store.append_ledger_entry(impl_record)
            records.extend(transcript_records(impl.transcript))
            records.append(impl_record)
            if impl.success:
                final = impl.attempts[-1]
                store.store_design(
                    DesignArtifact(
                        idea_id=run.idea.id,
                        config=final.config,
                        message=final.outcome.message,
                        artifact_paths=final.outcome.artifacts,
                        attempts=impl.expert_calls,
                    )
                )
            print(
                f"impl-0001: {'success' if impl.success else 'unsuccessful'} "
                f"after {impl.expert_calls} attempt(s)"
            )
    except AgentError as exc:
        print(f"replay aborted: {exc}", file=sys.stderr)
        return EXIT_DOMAIN

    transcript_path = store.root / "transcript.jsonl"
    body = "".join(json.dumps(rec, ensure_ascii=False) + "\n" for rec in records)
    transcript_path.write_text(body, encoding="utf-8")

    if expect_path is not None:
        expected = Path(expect_path).read_text(encoding="utf-8")
        if body != expected:
            print("transcript mismatch against expectation", file=sys.stderr)
            return EXIT_DOMAIN
        print("transcript matches expectation")
    return EXIT_OK


def _apply_common_flags(settings: CampaignSettings, args: argparse.Namespace) -> None:
    if getattr(args, "seed", None) is not None:
        settings.seed = args.seed
    if getattr(args, "backend", None):
        settings.backend = args.backend
    if getattr(args, "tool", None):
        settings.tool = args.tool
    if getattr(args, "parallel", None) is not None:
        settings.parallel = args.parallel
    if getattr(args, "out", None):
        settings.store_root = args.out
    if getattr(args, "script", None):
        settings.script = args.script


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mandel",
        description="Idea-generation campaigns with supervised review and a design-tool debug loop.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="campaign settings file (JSON)")
        p.add_argument("--seed", type=int, help="campaign seed")
        p.add_argument("--backend", choices=["live", "replay", "stub-embed"])
        p.add_argument("--tool", choices=["real", "stub"])
        p.add_argument("--parallel", type=int, help="concurrent runs (replay forces 1)")
        p.add_argument("--out", help="campaign store root")
        p.add_argument("--script", help="replay script path")

    p_run = sub.add_parser("run", help="execute idea-generation runs")
    common(p_run)
    p_run.add_argument("-n", "--runs", type=int, default=1, help="total runs in the campaign")

    p_impl = sub.add_parser("implement", help="run the Expert loop on pooled ideas")
    common(p_impl)
    p_impl.add_argument("--idea", help="implement this idea id instead of drawing randomly")
    p_impl.add_argument("--count", type=int, default=1, help="number of ideas to draw")
    p_impl.add_argument(
        "--ignore-rejections",
        action="store_true",
        help="draw from rejected proposals instead of the pool",
    )

    p_val = sub.add_parser("validate", help="validate design-tool config files")
    p_val.add_argument("paths", nargs="+", help="config files to check")

    p_rep = sub.add_parser("report", help="write the analytics bundle for a ledger")
    common(p_rep)
    p_rep.add_argument("--ledger", required=True, help="path to ledger.jsonl")
    p_rep.add_argument("--concepts", help="concept list file (one phrase per line)")

    p_replay = sub.add_parser("replay", help="replay a recorded session and verify the transcript")
    common(p_replay)
    p_replay.add_argument("replay_script", help="replay script path")
    p_replay.add_argument("--expect", help="expected transcript file to compare against")

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        settings = load_settings(getattr(args, "config", None))
        _apply_common_flags(settings, args)
        if args.command == "run":
            return cmd_run(settings, args.runs)
        if args.command == "implement":
            return cmd_implement(
                settings,
                idea_id=args.idea,
                count=args.count,
                ignore_rejections=args.ignore_rejections,
            )
        if args.command == "validate":
            return cmd_validate(args.paths)
        if args.command == "report":
            if not args.out:
                parser.error("report requires --out (output directory)")
            if args.concepts:
                settings.concepts_path = args.concepts
            return cmd_report(settings, args.ledger, args.out)
        if args.command == "replay":
            return cmd_replay(settings, args.replay_script, args.expect)
        parser.error(f"unknown command {args.command!r}")
        return EXIT_USAGE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Acceptance suite: one test per criterion, at the stated tolerances.

Runtime bounds are asserted with a wall clock inside the tests that
carry one.  The campaign-scale headline numbers are exercised as
report-formatting fixtures, not reproduced live.
"""

import json
import random
import subprocess
import sys
import time
from fractions import Fraction
from importlib import resources

import numpy as np

from mandel.agents import (
    ConceptPair,
    FULL_ACCEPT,
    FULL_REJECT,
    NOVELTY_ACCEPT,
    RunLimits,
    TickClock,
    classify_outcome,
    default_prompts,
    run_idea_generation,
)
from mandel.analytics import (
    CampaignLedger,
    compute_funnel,
    cumulative_new_concepts,
    histogram_agent_calls,
    pca_project,
    success_rate_by_class,
)
from mandel.cli import main as cli_main
from mandel.configschema import (
    fixture_names,
    load_fixture,
    load_fixture_text,
    parse_config,
    render_config,
    validate_config,
)
from mandel.literature import AbstractRecord, ArxivClient, Corpus, Literature
from mandel.llmbackend import ChatResponse, ScriptExhausted
from mandel.protocol import ActionEnvelope, ProtocolError, Role, RoleGrammar, grammar_for, parse_envelope, render_envelope
from mandel.store import CatalogEntry, IdeaPool, PublishedCatalog, read_jsonl

from test_configschema import brute_force_findings, make_mutant, validator_findings

FIG3_SCRIPT = str(resources.files("mandel") / "fixtures" / "replays" / "fig3_script.jsonl")
FIG3_EXPECTED = str(resources.files("mandel") / "fixtures" / "replays" / "fig3_expected.jsonl")

PROMPTS = default_prompts()
PAIR = ConceptPair("entanglement swapping", "logical qubits")
CATALOG = PublishedCatalog(entries=(CatalogEntry("bell_swap", "plain swapping"),))


def test_fixture_validation_and_mutant_oracle():
    """All seven bundled configs are clean and round-trip; >=500 mutants are
    rejected with findings identical to the brute-force reference checker.
    Runtime < 5s."""
    started = time.monotonic()
    names = fixture_names()
    assert len(names) == 7
    for name in names:
        cfg = load_fixture(name)
        report = validate_config(cfg)
        assert report.errors == [], name
        rendered = render_config(cfg)
        assert parse_config(rendered) == cfg, name
        assert render_config(parse_config(rendered)) == rendered, name

    rng = random.Random(20250101)
    fixture_docs = [json.loads(load_fixture_text(name)) for name in names]
    mutants_checked = 0
    while mutants_checked < 500:
        for doc in fixture_docs:
            mutant = make_mutant(doc, rng)
            expected = brute_force_findings(mutant)
            assert expected, "mutant generator produced a clean config"
            assert validator_findings(mutant) == expected
            mutants_checked += 1
    elapsed = time.monotonic() - started
    assert elapsed < 5.0, f"fixture validation criterion took {elapsed:.2f}s"


def test_fig3_golden_replay(tmp_path):
    """Shipped replay script + stub tool: FullAccept via one novelty reject,
    one pooled idea, a stored design after exactly 2 Expert attempts, and a
    byte-identical transcript across two executions.  Runtime < 2s."""
    started = time.monotonic()
    transcripts = []
    for tag in ("first", "second"):
        store = tmp_path / tag
        rc = cli_main(["replay", FIG3_SCRIPT, "--expect", FIG3_EXPECTED, "--out", str(store)])
        assert rc == 0
        transcripts.append((store / "transcript.jsonl").read_bytes())

        ledger = read_jsonl(store / "ledger.jsonl")
        idea_runs = [r for r in ledger if r["type"] == "idea_run"]
        assert len(idea_runs) == 1
        assert idea_runs[0]["outcome"] == FULL_ACCEPT
        assert idea_runs[0]["novelty_calls"] == 2  # one reject, then accept
        assert idea_runs[0]["judge_calls"] == 1

        pool = read_jsonl(store / "pool.jsonl")
        assert len(pool) == 1

        impls = [r for r in ledger if r["type"] == "implementation"]
        assert len(impls) == 1
        assert impls[0]["success"] is True
        assert impls[0]["expert_calls"] == 2

        design_dir = store / "designs" / idea_runs[0]["idea_id"]
        assert (design_dir / "config.json").exists()
        assert (design_dir / "outcome.json").exists()

    assert transcripts[0] == transcripts[1]
    elapsed = time.monotonic() - started
    assert elapsed < 2.0, f"golden replay criterion took {elapsed:.2f}s"


class _SeqBackend:
    def __init__(self, responses):
        self.responses = list(responses)
        self.pos = 0
        self.requests = []

    def complete(self, request):
        self.requests.append(request)
        if self.pos >= len(self.responses):
            raise ScriptExhausted("script exhausted")
        content = self.responses[self.pos]
        self.pos += 1
        return ChatResponse(content=content)


def _turn(thought, action, action_input):
    return f"Thought: {thought}\n\nAction: {action}\n\nAction Input: {action_input}"


def _plan_run(rng, run_no, limits):
    """Build (responses, expected) for one randomized scripted run following
    the engine's consumption order."""
    responses = []
    feedbacks = []
    note_indices = []
    proposals = 0
    intended = rng.choice([FULL_REJECT, NOVELTY_ACCEPT, FULL_ACCEPT])

    def emit_proposal():
        nonlocal proposals
        proposals += 1
        responses.append(
            _turn(
                f"thinking {proposals}",
                "final answer",
                f"Title: Run {run_no} proposal {proposals}\n"
                f"Abstract: Abstract {run_no}-{proposals}.\n\nTarget body.",
            )
        )

    def emit_verdict(decision, text):
        responses.append(_turn("judging", decision, text))

    def after_verdicts():
        if proposals % limits.mediator_period == 0:
            note = f"note-{run_no}-{proposals}"
            responses.append(note)
            note_indices.append(proposals)

    if intended == FULL_REJECT:
        rejections = limits.max_novelty_rounds
        for i in range(rejections):
            emit_proposal()
            fb = f"nov-feedback-{run_no}-{i}"
            emit_verdict("reject", fb)
            feedbacks.append((fb, i < rejections - 1))
            after_verdicts()
    else:
        nov_rejects = rng.randint(0, limits.max_novelty_rounds - 1)
        for i in range(nov_rejects):
            emit_proposal()
            fb = f"nov-feedback-{run_no}-{i}"
            emit_verdict("reject", fb)
            feedbacks.append((fb, True))
            after_verdicts()
        if intended == FULL_ACCEPT:
            judge_rejects = rng.randint(0, limits.max_judge_rounds - 1)
        else:
            judge_rejects = limits.max_judge_rounds
        # first judged proposal: novelty accept then judge verdict
        emit_proposal()
        emit_verdict("accept", "novel enough")
        if judge_rejects == 0:
            emit_verdict("accept", "feasible")
            after_verdicts()
        else:
            fb = f"judge-feedback-{run_no}-0"
            emit_verdict("reject", fb)
            feedbacks.append((fb, judge_rejects > 1 or intended == FULL_ACCEPT))
            after_verdicts()
            for j in range(1, judge_rejects):
                emit_proposal()
                fb = f"judge-feedback-{run_no}-{j}"
                emit_verdict("reject", fb)
                feedbacks.append((fb, j < judge_rejects - 1 or intended == FULL_ACCEPT))
                after_verdicts()
            if intended == FULL_ACCEPT:
                emit_proposal()
                emit_verdict("accept", "feasible now")
                after_verdicts()

    expected = {
        "outcome": intended,
        "proposals": proposals,
        "note_indices": note_indices,
        "feedbacks": feedbacks,
    }
    return responses, expected


def test_state_machine_invariants_over_200_runs(tmp_path):
    """Partition, mediator cadence, verbatim feedback threading, and pool
    monotonicity over 200 randomized scripted runs.  Runtime < 30s."""
    started = time.monotonic()
    rng = random.Random(424242)
    corpus = Corpus(
        [AbstractRecord(f"c/{i}", f"Seed {i}", f"Seed abstract {i}.") for i in range(5)]
    )
    literature = Literature(
        corpus=corpus, client=ArxivClient(fetch=lambda u, t: "<feed/>", rate_limit_s=0.0)
    )
    pool = IdeaPool(tmp_path / "pool.jsonl")
    limits = RunLimits(max_novelty_rounds=4, max_judge_rounds=3, mediator_period=3)

    outcome_counts = {FULL_REJECT: 0, NOVELTY_ACCEPT: 0, FULL_ACCEPT: 0}
    for run_no in range(200):
        responses, expected = _plan_run(rng, run_no, limits)
        backend = _SeqBackend(responses)
        run = run_idea_generation(
            backend, literature, pool, CATALOG, PAIR, limits, random.Random(run_no),
            prompts=PROMPTS, clock=TickClock(), run_id=f"run-{run_no:04d}",
        )
        assert run.outcome == expected["outcome"]
        assert classify_outcome(run) == run.outcome
        assert run.iteration_count == expected["proposals"]
        assert backend.pos == len(responses), "script fully consumed"

        # mediator notes occur exactly at proposal indices 3, 6, 9, ...
        assert [f"note-{run_no}-{k}" for k in expected["note_indices"]] == run.mediator_notes
        assert expected["note_indices"] == [
            k for k in range(1, run.iteration_count + 1) if k % limits.mediator_period == 0
        ]

        # every reject's feedback appears verbatim in the next researcher context
        researcher_requests = [
            r for r in backend.requests if r.messages[0][1] == PROMPTS.researcher
        ]
        final_context = "\n".join(c for _, c in researcher_requests[-1].messages)
        for feedback, has_next_context in expected["feedbacks"]:
            if has_next_context:
                assert feedback in final_context

        outcome_counts[run.outcome] += 1

    assert sum(outcome_counts.values()) == 200
    assert len(pool) == outcome_counts[FULL_ACCEPT]
    elapsed = time.monotonic() - started
    assert elapsed < 30.0, f"state-machine criterion took {elapsed:.2f}s"


def test_envelope_parser_round_trip_and_fuzz():
    """1000-case parse(render(e)) identity and fuzz totality."""
    rng = random.Random(777)
    words = ["photon", "swap", "node", "herald", "qutrit", "ancilla"]
    actions = sorted({"accept", "reject", "arxiv", "final answer", "pytheus"})
    grammar = RoleGrammar(role=Role.EXPERT, allowed_actions=frozenset(actions))

    for _ in range(1000):
        def block():
            return "\n".join(
                " ".join(rng.choices(words, k=rng.randint(1, 6)))
                for _ in range(rng.randint(1, 3))
            )

        env = ActionEnvelope(thought=block(), action=rng.choice(actions), action_input=block())
        assert parse_envelope(render_envelope(env), grammar) == env

    alphabet = "aTAIc: \t\nounthgipsé☃"
    judge = grammar_for(Role.JUDGE)
    for _ in range(1000):
        raw = "".join(rng.choices(alphabet, k=rng.randint(0, 100)))
        try:
            parse_envelope(raw, judge)
        except ProtocolError:
            pass  # typed errors only; anything else fails the test


def test_analytics_identities():
    """Funnel, histograms, and rates equal independent recounts exactly; the
    headline-totals ledger renders 739/804 within 1e-4; the concept curve is
    non-decreasing and matches a hand-enumerated oracle."""
    rng = random.Random(5150)
    classes = (FULL_REJECT, NOVELTY_ACCEPT, FULL_ACCEPT)
    idea_runs = [
        {
            "type": "idea_run",
            "run_id": f"run-{i:04d}",
            "outcome": rng.choice(classes),
            "researcher_calls": rng.randint(1, 10),
            "novelty_calls": rng.randint(1, 5),
            "judge_calls": rng.randint(0, 5),
            "mediator_calls": rng.randint(0, 3),
            "abstract": f"abstract {i}",
        }
        for i in range(100)
    ]
    implementations = [
        {
            "type": "implementation",
            "run_id": f"impl-{j:04d}",
            "idea_id": f"run-{j:04d}-idea-1",
            "source_outcome": rng.choice(classes),
            "expert_calls": rng.randint(1, 10),
            "success": rng.random() < 0.9,
        }
        for j in range(80)
    ]
    ledger = CampaignLedger(idea_runs=idea_runs, implementations=implementations)

    funnel = compute_funnel(ledger)
    recount = {cls: 0 for cls in classes}
    for rec in idea_runs:
        recount[rec["outcome"]] += 1
    assert funnel == recount
    assert sum(funnel.values()) == 100

    for role, key in (
        (Role.RESEARCHER, "researcher_calls"),
        (Role.NOVELTY_SUPERVISOR, "novelty_calls"),
        (Role.JUDGE, "judge_calls"),
        (Role.MEDIATOR, "mediator_calls"),
    ):
        hist = histogram_agent_calls(ledger, role)
        brute = {}
        for rec in idea_runs:
            brute[rec[key]] = brute.get(rec[key], 0) + 1
        assert hist == brute

    rates = success_rate_by_class(ledger)
    for cls in classes:
        attempts = [r for r in implementations if r["source_outcome"] == cls]
        if attempts:
            wins = sum(1 for r in attempts if r["success"])
            assert rates[cls].fraction == Fraction(wins, len(attempts))

    headline = CampaignLedger(
        implementations=[
            {"type": "implementation", "run_id": f"i{j}", "idea_id": f"d{j}",
             "source_outcome": FULL_ACCEPT, "expert_calls": 1, "success": j < 739}
            for j in range(804)
        ]
    )
    overall = success_rate_by_class(headline)["overall"]
    assert overall.fraction == Fraction(739, 804)
    assert abs(overall.decimal - 0.9191) <= 0.0001

    abstracts = [
        "We study entanglement swapping in rings.",
        "Nothing new here.",
        "Heralding and entanglement swapping combined.",
        "A geometric phase via heralding.",
        "Geometric phase revisited.",
    ]
    concepts = ["entanglement swapping", "heralding", "geometric phase", "teleportation"]
    curve = cumulative_new_concepts(abstracts, concepts)
    assert curve == [1, 1, 2, 3, 3]  # enumerated by hand
    assert all(a <= b for a, b in zip(curve, curve[1:]))
    assert curve[-1] <= len(concepts)


def test_pca_tolerances():
    """Exact-rank-2 reconstruction <= 1e-9; components orthonormal within
    1e-9 and variances within 1e-6 of a dense eigensolver on random 50x10."""
    rng = np.random.default_rng(2024)
    basis = np.linalg.qr(rng.normal(size=(10, 2)))[0]
    coords = rng.normal(size=(60, 2)) * np.array([4.0, 1.0])
    plane_data = coords @ basis.T
    projection = pca_project(plane_data, k=2)
    centered = plane_data - plane_data.mean(axis=0)
    reconstruction = projection.coordinates @ projection.components
    assert np.max(np.abs(reconstruction - centered)) <= 1e-9

    data = rng.normal(size=(50, 10))
    projection = pca_project(data, k=2)
    gram = projection.components @ projection.components.T
    assert np.max(np.abs(gram - np.eye(2))) <= 1e-9
    centered = data - data.mean(axis=0)
    eigenvalues = np.linalg.eigh(centered.T @ centered / 49)[0][::-1]
    assert abs(projection.variances[0] - eigenvalues[0]) <= 1e-6
    assert abs(projection.variances[1] - eigenvalues[1]) <= 1e-6
    assert projection.variances[0] >= projection.variances[1]


def test_run_command_determinism_across_processes(tmp_path):
    """`run --seed S` under replay backend + stub tool writes byte-identical
    ledger.jsonl (and pool.jsonl) in two separate processes."""
    def proposal(n):
        return _turn(
            f"p{n}", "final answer",
            f"Title: Deterministic idea {n}\nAbstract: A{n}.\n\nBody {n}.",
        )

    responses = [
        proposal(1), _turn("v", "accept", "novel"), _turn("v", "accept", "feasible"),
        proposal(2), _turn("v", "reject", "r1"),
        proposal(3), _turn("v", "reject", "r2"),
        proposal(4), _turn("v", "reject", "r3"), "a mediator note",
        proposal(5), _turn("v", "reject", "r4"),
        proposal(6), _turn("v", "reject", "r5"),
    ]
    script = tmp_path / "campaign.jsonl"
    with open(script, "w") as f:
        for i, response in enumerate(responses):
            f.write(json.dumps({"index": i, "last_role": "user", "response": response}) + "\n")

    artifacts = []
    for tag in ("a", "b"):
        store = tmp_path / f"store-{tag}"
        proc = subprocess.run(
            [sys.executable, "-m", "mandel.cli", "run", "-n", "2",
             "--backend", "replay", "--script", str(script),
             "--tool", "stub", "--out", str(store), "--seed", "99"],
            capture_output=True, text=True,
        )
        assert proc.returncode == 0, proc.stderr
        artifacts.append(
            ((store / "ledger.jsonl").read_bytes(), (store / "pool.jsonl").read_bytes())
        )
    assert artifacts[0][0] == artifacts[1][0]
    assert artifacts[0][1] == artifacts[1][1]

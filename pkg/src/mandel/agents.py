"""Orchestration state machine for idea-generation and implementation runs.

An idea-generation run drives one Researcher conversation through two
review gates.  The Researcher may search the literature (capped) or
propose a final answer; proposals go to the Novelty Supervisor until one
is accepted (or the rejection cap ends the run as FullReject), after
which proposals go to the Judge until acceptance (FullAccept, idea
pooled) or cap exhaustion (NoveltyAccept).  Every rejection's feedback
is threaded verbatim into the Researcher's next context.  A Mediator is
called after every Nth proposal and its note joins the shared
conversation.

An implementation run drives one Expert conversation against the design
tool: each turn's config payload is parsed and submitted, failures are
fed back as error text, and the loop ends on success or the retry cap.

Unparseable agent turns get exactly one re-prompt carrying the parse
error; a second consecutive failure aborts the run with the transcript
preserved.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from importlib import resources
from pathlib import Path
from typing import Any

from .configschema import ConfigError, DesignConfig, parse_config
from .llmbackend import BackendError, ChatRequest
from .protocol import (
    ACTION_ACCEPT,
    ACTION_ARXIV,
    ActionEnvelope,
    ProtocolError,
    Role,
    grammar_for,
    parse_envelope,
)
from .toolrunner import ToolOutcome, ToolStatus

FULL_REJECT = "FullReject"
NOVELTY_ACCEPT = "NoveltyAccept"
FULL_ACCEPT = "FullAccept"
OUTCOME_CLASSES = (FULL_REJECT, NOVELTY_ACCEPT, FULL_ACCEPT)

DEFAULT_MODEL = "o4-mini"


class AgentError(Exception):
    pass


class MissingInput(AgentError):
    pass


class EmptyPool(AgentError):
    pass


class BackendFailure(AgentError):
    """Backend died mid-run; the transcript so far is preserved."""

    def __init__(self, cause: Exception, transcript: list):
        self.cause = cause
        self.transcript = transcript
        super().__init__(f"backend failure: {cause}")


class ParseFailureExhausted(AgentError):
    """Two consecutive unparseable turns from one role."""

    def __init__(self, role: Role, transcript: list, detail: str = ""):
        self.role = role
        self.transcript = transcript
        msg = f"{role.value} produced consecutive unusable turns"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class LiveClock:
    def now(self) -> str:
        return datetime.now(timezone.utc).isoformat(timespec="seconds")


class TickClock:
    """Deterministic clock: fixed start, one second per call."""

    def __init__(self, start: str = "2025-01-01T00:00:00+00:00"):
        self._start = datetime.fromisoformat(start)
        self._ticks = 0

    def now(self) -> str:
        stamp = self._start + timedelta(seconds=self._ticks)
        self._ticks += 1
        return stamp.isoformat(timespec="seconds")


@dataclass(frozen=True)
class ConceptPair:
    concept_a: str
    concept_b: str
    source_id: str = ""

    def __post_init__(self):
        if not self.concept_a.strip() or not self.concept_b.strip():
            raise ValueError("both concepts must be non-empty")
        if self.concept_a == self.concept_b:
            raise ValueError("concept pair must contain two distinct concepts")


@dataclass
class Idea:
    id: str
    title: str
    abstract: str
    target_description: str
    concepts: ConceptPair
    run_id: str
    created_at: str


@dataclass(frozen=True)
class Verdict:
    agent: Role
    decision: str
    feedback: str

    def __post_init__(self):
        if self.decision not in ("accept", "reject"):
            raise ValueError(f"invalid decision {self.decision!r}")
        if self.decision == "reject" and not self.feedback.strip():
            raise ValueError("reject verdicts must carry feedback")


@dataclass
class TranscriptEntry:
    role: Role
    raw: str
    envelope: ActionEnvelope | None
    error: str | None


@dataclass
class IdeaRun:
    run_id: str
    pair: ConceptPair
    transcript: list[TranscriptEntry] = field(default_factory=list)
    verdicts: list[Verdict] = field(default_factory=list)
    outcome: str | None = None
    iteration_count: int = 0
    arxiv_queries_used: int = 0
    mediator_notes: list[str] = field(default_factory=list)
    idea: Idea | None = None
    pool_seq: int | None = None

    def call_counts(self) -> dict[Role, int]:
        counts = {role: 0 for role in Role}
        for entry in self.transcript:
            counts[entry.role] += 1
        return counts


@dataclass
class Attempt:
    config: DesignConfig | None
    raw_config: str
    outcome: ToolOutcome


@dataclass
class ImplementationRecord:
    idea_id: str
    attempts: list[Attempt] = field(default_factory=list)
    transcript: list[TranscriptEntry] = field(default_factory=list)

    @property
    def success(self) -> bool:
        return bool(self.attempts) and self.attempts[-1].outcome.success

    @property
    def expert_calls(self) -> int:
        return len(self.attempts)


@dataclass(frozen=True)
class RunLimits:
    max_novelty_rounds: int = 5
    max_judge_rounds: int = 5
    max_arxiv_queries: int = 5
    retry_cap: int = 10
    mediator_period: int = 3

    def __post_init__(self):
        for name in ("max_novelty_rounds", "max_judge_rounds", "max_arxiv_queries", "retry_cap", "mediator_period"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class RolePrompts:
    researcher: str
    novelty: str
    judge: str
    mediator: str
    expert: str


def _data_text(relpath: str) -> str:
    return (resources.files("mandel") / "data" / relpath).read_text(encoding="utf-8")


def default_prompts() -> RolePrompts:
    return RolePrompts(
        researcher=_data_text("prompts/researcher.txt"),
        novelty=_data_text("prompts/novelty.txt"),
        judge=_data_text("prompts/judge.txt"),
        mediator=_data_text("prompts/mediator.txt"),
        expert=_data_text("prompts/expert.txt"),
    )


def default_tool_docs() -> str:
    return _data_text("tool_docs.txt")


def default_limitations() -> str:
    return _data_text("limitations.txt")


_REPROMPT = (
    "Your previous reply could not be processed: {error}\n"
    "Respond again using exactly this structure:\n"
    "Thought: (your reasoning)\n\nAction: (one allowed action)\n\nAction Input: (the input for the action)"
)


def _complete(backend, messages, model: str, temperature: float, transcript) -> str:
    request = ChatRequest(messages=tuple(messages), model=model, temperature=temperature)
    try:
        return backend.complete(request).content
    except BackendError as exc:
        raise BackendFailure(exc, transcript) from exc


def _role_turn(backend, role: Role, messages, transcript, model, temperature) -> ActionEnvelope:
    """One structured turn with a single re-prompt on parse failure."""
    grammar = grammar_for(role)
    msgs = list(messages)
    last_error: ProtocolError | None = None
    for _ in range(2):
        raw = _complete(backend, msgs, model, temperature, transcript)
        try:
            env = parse_envelope(raw, grammar)
        except ProtocolError as exc:
            transcript.append(TranscriptEntry(role, raw, None, str(exc)))
            last_error = exc
            msgs = msgs + [("assistant", raw), ("user", _REPROMPT.format(error=exc))]
            continue
        transcript.append(TranscriptEntry(role, raw, env, None))
        return env
    raise ParseFailureExhausted(role, transcript, str(last_error))


def _render_abstracts(records) -> str:
    blocks = []
    for i, rec in enumerate(records, start=1):
        blocks.append(f"[{i}] {rec.title}\n{rec.abstract}")
    return "\n\n".join(blocks)


def assemble_researcher_context(
    seed_abstracts,
    tool_docs: str,
    limitations: str,
    pair: ConceptPair,
    history: list[tuple],
    prompt_text: str,
) -> tuple[tuple[str, str], ...]:
    """Researcher message sequence: the four standing inputs in fixed
    order (tool docs, limitations, seed abstracts, concept pair), then
    the accumulated conversation (proposals, search results, feedback,
    mediator notes).  Rejection feedback appears verbatim."""
    if len(seed_abstracts) != 3:
        raise MissingInput(f"expected exactly 3 seed abstracts, got {len(seed_abstracts)}")
    if not tool_docs.strip() or not limitations.strip():
        raise MissingInput("tool docs and limitations must be non-empty")

    bundle = (
        "== Design tool ==\n"
        f"{tool_docs.strip()}\n\n"
        "== Constraints ==\n"
        f"{limitations.strip()}\n\n"
        "== Random seed abstracts ==\n"
        f"{_render_abstracts(seed_abstracts)}\n\n"
        "== Concept pair to combine ==\n"
        f"Concept A: {pair.concept_a}\n"
        f"Concept B: {pair.concept_b}\n"
        "Your final idea must meaningfully combine both concepts."
    )
    messages: list[tuple[str, str]] = [("system", prompt_text), ("user", bundle)]
    for event in history:
        kind = event[0]
        if kind == "researcher_turn":
            messages.append(("assistant", event[1]))
        elif kind == "arxiv_result":
            _, query, records = event
            if records:
                body = _render_abstracts(records)
            else:
                body = "(no results)"
            messages.append(("user", f"Literature search results for {query!r}:\n{body}"))
        elif kind == "feedback":
            _, source, text = event
            messages.append(("user", f"Feedback from the {source}:\n{text}"))
        elif kind == "mediator":
            messages.append(("user", f"Mediator note:\n{event[1]}"))
        elif kind == "notice":
            messages.append(("user", event[1]))
        else:
            raise ValueError(f"unknown history event kind {kind!r}")
    return tuple(messages)


_TITLE_LABELS = ("title:",)
_ABSTRACT_LABELS = ("mini-abstract:", "abstract:")


def _extract_labeled(text: str, labels: tuple[str, ...]) -> str:
    lines = text.splitlines()
    for i, line in enumerate(lines):
        lowered = line.strip().lower()
        for label in labels:
            if lowered.startswith(label):
                parts = [line.strip()[len(label):].strip()]
                for cont in lines[i + 1 :]:
                    stripped = cont.strip()
                    low = stripped.lower()
                    if not stripped or any(
                        low.startswith(l) for l in _TITLE_LABELS + _ABSTRACT_LABELS
                    ):
                        break
                    parts.append(stripped)
                return " ".join(p for p in parts if p).strip()
    return ""


def idea_from_proposal(
    proposal_text: str, pair: ConceptPair, run_id: str, idea_id: str, created_at: str
) -> Idea:
    """Build an Idea record from a final-answer payload.

    The proposal convention is a Title: line and an Abstract: (or
    Mini-abstract:) paragraph; without them the first line and first
    paragraph stand in.  The full payload is kept verbatim as the
    target description.
    """
    title = _extract_labeled(proposal_text, _TITLE_LABELS)
    abstract = _extract_labeled(proposal_text, _ABSTRACT_LABELS)
    nonempty_lines = [ln.strip() for ln in proposal_text.splitlines() if ln.strip()]
    if not title:
        title = nonempty_lines[0][:120]
    if not abstract:
        paragraph = proposal_text.strip().split("\n\n", 1)[0]
        abstract = " ".join(paragraph.split())
    return Idea(
        id=idea_id,
        title=title,
        abstract=abstract,
        target_description=proposal_text,
        concepts=pair,
        run_id=run_id,
        created_at=created_at,
    )


def _render_idea(idea: Idea) -> str:
    return (
        f"Title: {idea.title}\n"
        f"Abstract: {idea.abstract}\n\n"
        f"Full target description:\n{idea.target_description}"
    )


def evaluate_novelty(
    idea: Idea,
    pool,
    published_catalog,
    backend,
    *,
    prompt_text: str | None = None,
    model: str = DEFAULT_MODEL,
    temperature: float = 1.0,
    transcript: list[TranscriptEntry] | None = None,
) -> Verdict:
    """One Novelty Supervisor turn over the pool and published catalogue."""
    if prompt_text is None:
        prompt_text = default_prompts().novelty
    transcript = transcript if transcript is not None else []
    pool_blocks = [
        f"- {title}: {abstract}" for title, abstract in pool.abstracts()
    ] or ["(the idea pool is empty)"]
    catalog_blocks = [
        f"- {entry.name}: {entry.description}" for entry in published_catalog
    ] or ["(no published targets listed)"]
    context = (
        "== Ideas already in the pool ==\n"
        + "\n".join(pool_blocks)
        + "\n\n== Previously implemented and published targets ==\n"
        + "\n".join(catalog_blocks)
        + "\n\n== Candidate idea ==\n"
        + _render_idea(idea)
        + "\n\nDecide: accept or reject."
    )
    messages = (("system", prompt_text), ("user", context))
    env = _role_turn(backend, Role.NOVELTY_SUPERVISOR, messages, transcript, model, temperature)
    return Verdict(agent=Role.NOVELTY_SUPERVISOR, decision=env.action, feedback=env.action_input)


def evaluate_feasibility(
    idea: Idea,
    tool_description: str,
    backend,
    *,
    prompt_text: str | None = None,
    model: str = DEFAULT_MODEL,
    temperature: float = 1.0,
    transcript: list[TranscriptEntry] | None = None,
) -> Verdict:
    """One Judge turn with the design-tool description in context."""
    if prompt_text is None:
        prompt_text = default_prompts().judge
    transcript = transcript if transcript is not None else []
    context = (
        "== Design tool ==\n"
        + tool_description.strip()
        + "\n\n== Candidate idea ==\n"
        + _render_idea(idea)
        + "\n\nDecide: accept or reject."
    )
    messages = (("system", prompt_text), ("user", context))
    env = _role_turn(backend, Role.JUDGE, messages, transcript, model, temperature)
    return Verdict(agent=Role.JUDGE, decision=env.action, feedback=env.action_input)


def render_transcript(transcript: list[TranscriptEntry]) -> str:
    return "\n\n".join(f"[{entry.role.value}] {entry.raw}" for entry in transcript)


def invoke_mediator(
    all_role_prompts: str,
    conversation: list[TranscriptEntry],
    backend,
    *,
    prompt_text: str | None = None,
    model: str = DEFAULT_MODEL,
    temperature: float = 1.0,
    transcript: list[TranscriptEntry] | None = None,
) -> str:
    """Free-text mediator note over the other roles' prompts and the
    conversation so far."""
    if prompt_text is None:
        prompt_text = default_prompts().mediator
    transcript = transcript if transcript is not None else []
    context = (
        "== Prompts of the other agents ==\n"
        + all_role_prompts
        + "\n\n== Conversation so far ==\n"
        + render_transcript(conversation)
        + "\n\nWrite a short note highlighting communication inefficiencies and how to fix them."
    )
    messages = (("system", prompt_text), ("user", context))
    raw = _complete(backend, messages, model, temperature, transcript)
    transcript.append(TranscriptEntry(Role.MEDIATOR, raw, None, None))
    return raw.strip()


def run_idea_generation(
    backend,
    literature,
    pool,
    published_catalog,
    pair: ConceptPair,
    limits: RunLimits,
    rng,
    *,
    prompts: RolePrompts | None = None,
    tool_docs: str | None = None,
    limitations: str | None = None,
    clock=None,
    run_id: str = "run-adhoc",
    model: str = DEFAULT_MODEL,
    temperature: float = 1.0,
) -> IdeaRun:
    """Drive one idea-generation run to a terminal outcome.

    FullAccept ideas are appended to the pool before returning.
    """
    prompts = prompts or default_prompts()
    tool_docs = tool_docs if tool_docs is not None else default_tool_docs()
    limitations = limitations if limitations is not None else default_limitations()
    clock = clock or LiveClock()

    run = IdeaRun(run_id=run_id, pair=pair)
    seeds = literature.sample_seeds(3, rng)
    history: list[tuple] = []
    role_prompt_bundle = (
        f"--- Researcher prompt ---\n{prompts.researcher}\n\n"
        f"--- Novelty Supervisor prompt ---\n{prompts.novelty}\n\n"
        f"--- Judge prompt ---\n{prompts.judge}"
    )

    novelty_rejections = 0
    judge_rejections = 0
    over_budget_attempts = 0
    novelty_passed = False

    while run.outcome is None:
        messages = assemble_researcher_context(
            seeds, tool_docs, limitations, pair, history, prompts.researcher
        )
        env = _role_turn(backend, Role.RESEARCHER, messages, run.transcript, model, temperature)
        history.append(("researcher_turn", run.transcript[-1].raw))

        if env.action == ACTION_ARXIV:
            if run.arxiv_queries_used >= limits.max_arxiv_queries:
                over_budget_attempts += 1
                if over_budget_attempts >= 2:
                    raise ParseFailureExhausted(
                        Role.RESEARCHER, run.transcript, "literature budget exceeded twice"
                    )
                history.append(
                    ("notice", "The literature-search budget is exhausted. Provide a final answer.")
                )
                continue
            over_budget_attempts = 0
            run.arxiv_queries_used += 1
            results = literature.search(env.action_input)
            history.append(("arxiv_result", env.action_input, tuple(results)))
            continue

        # final answer: one proposal
        over_budget_attempts = 0
        run.iteration_count += 1
        idea = idea_from_proposal(
            env.action_input,
            pair,
            run_id,
            idea_id=f"{run_id}-idea-{run.iteration_count}",
            created_at=clock.now(),
        )
        run.idea = idea

        if not novelty_passed:
            verdict = evaluate_novelty(
                idea, pool, published_catalog, backend,
                prompt_text=prompts.novelty, model=model, temperature=temperature,
                transcript=run.transcript,
            )
            run.verdicts.append(verdict)
            if verdict.decision == ACTION_ACCEPT:
                novelty_passed = True
            else:
                novelty_rejections += 1
                history.append(("feedback", "Novelty Supervisor", verdict.feedback))
                if novelty_rejections >= limits.max_novelty_rounds:
                    run.outcome = FULL_REJECT

        if novelty_passed and run.outcome is None:
            verdict = evaluate_feasibility(
                idea, tool_docs, backend,
                prompt_text=prompts.judge, model=model, temperature=temperature,
                transcript=run.transcript,
            )
            run.verdicts.append(verdict)
            if verdict.decision == ACTION_ACCEPT:
                run.outcome = FULL_ACCEPT
            else:
                judge_rejections += 1
                history.append(("feedback", "Judge", verdict.feedback))
                if judge_rejections >= limits.max_judge_rounds:
                    run.outcome = NOVELTY_ACCEPT

        if run.iteration_count % limits.mediator_period == 0:
            note = invoke_mediator(
                role_prompt_bundle, run.transcript, backend,
                prompt_text=prompts.mediator, model=model, temperature=temperature,
                transcript=run.transcript,
            )
            run.mediator_notes.append(note)
            history.append(("mediator", note))

    if run.outcome == FULL_ACCEPT and run.idea is not None:
        run.pool_seq = pool.append(run.idea)
    return run


def run_implementation(
    idea: Idea,
    backend,
    tool,
    retry_cap: int,
    workdir: str | Path,
    *,
    prompts: RolePrompts | None = None,
    tool_docs: str | None = None,
    model: str = DEFAULT_MODEL,
    temperature: float = 1.0,
) -> ImplementationRecord:
    """Expert debug loop: propose a config, run the tool, feed errors back.

    Config parse failures are tool Failures fed back to the Expert, not
    run aborts; only unusable Expert turns abort.  Every attempt gets
    its own sub-workdir so artifacts never collide.
    """
    prompts = prompts or default_prompts()
    tool_docs = tool_docs if tool_docs is not None else default_tool_docs()
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    record = ImplementationRecord(idea_id=idea.id)
    bundle = (
        "== Design tool ==\n"
        + tool_docs.strip()
        + "\n\n== Idea to implement ==\n"
        + _render_idea(idea)
        + "\n\nWrite a working configuration and call the tool."
    )
    messages: list[tuple[str, str]] = [("system", prompts.expert), ("user", bundle)]

    while len(record.attempts) < retry_cap:
        env = _role_turn(backend, Role.EXPERT, messages, record.transcript, model, temperature)
        messages.append(("assistant", record.transcript[-1].raw))
        cfg: DesignConfig | None
        try:
            cfg = parse_config(env.action_input)
        except ConfigError as exc:
            cfg = None
            outcome = ToolOutcome(ToolStatus.FAILURE, f"config rejected: {exc}")
        else:
            attempt_dir = workdir / f"attempt-{len(record.attempts) + 1:02d}"
            outcome = tool.run(cfg, attempt_dir)
        record.attempts.append(Attempt(config=cfg, raw_config=env.action_input, outcome=outcome))
        if outcome.success:
            break
        messages.append(
            (
                "user",
                "The tool run failed with this error:\n"
                f"{outcome.message}\n"
                "Revise the configuration and call the tool again.",
            )
        )
    return record


def idea_from_pool_record(record: dict[str, Any]) -> Idea:
    return Idea(
        id=record["id"],
        title=record["title"],
        abstract=record["abstract"],
        target_description=record["target_description"],
        concepts=ConceptPair(
            concept_a=record["concept_a"],
            concept_b=record["concept_b"],
            source_id=record.get("concept_source", ""),
        ),
        run_id=record["run_id"],
        created_at=record["created_at"],
    )


def select_idea(pool, rng, exclude: frozenset[str] | set[str] = frozenset()) -> Idea:
    """Uniform draw from the pool under the seeded generator."""
    eligible = [e for e in pool.entries() if e.record["id"] not in exclude]
    if not eligible:
        raise EmptyPool("no eligible ideas in the pool")
    entry = eligible[rng.randrange(len(eligible))]
    return idea_from_pool_record(entry.record)


def classify_outcome(run: IdeaRun) -> str:
    """Terminal class from the verdict list alone."""
    novelty_accepts = sum(
        1
        for v in run.verdicts
        if v.agent is Role.NOVELTY_SUPERVISOR and v.decision == ACTION_ACCEPT
    )
    judge_accepts = sum(
        1 for v in run.verdicts if v.agent is Role.JUDGE and v.decision == ACTION_ACCEPT
    )
    if novelty_accepts == 0:
        return FULL_REJECT
    if judge_accepts == 0:
        return NOVELTY_ACCEPT
    return FULL_ACCEPT

"""Agent output grammar: the Thought / Action / Action Input envelope.

Every structured agent turn is three labeled sections.  Parsing is
deliberately forgiving about *where* the sections appear (chat models
like to restate templates) but strict about *what* counts as a marker:
the literal labels ``Thought:``, ``Action:``, ``Action Input:`` at the
start of a line, case-sensitive, with optional leading indentation.
When markers occur more than once, the last well-ordered triple wins --
the final statement is taken as the commitment.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum


class Role(Enum):
    RESEARCHER = "researcher"
    NOVELTY_SUPERVISOR = "novelty_supervisor"
    JUDGE = "judge"
    MEDIATOR = "mediator"
    EXPERT = "expert"


ACTION_ARXIV = "arxiv"
ACTION_FINAL_ANSWER = "final answer"
ACTION_ACCEPT = "accept"
ACTION_REJECT = "reject"
ACTION_PYTHEUS = "pytheus"


class ProtocolError(Exception):
    """Base class for envelope parse failures."""


class MissingSection(ProtocolError):
    """A marker is absent, out of order, or its section is empty."""

    def __init__(self, section: str, detail: str = ""):
        self.section = section
        msg = f"missing or empty section: {section}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class UnknownAction(ProtocolError):
    """The action token is not in the role's registry.

    Carries the offending token so the caller can re-prompt with it.
    """

    def __init__(self, action: str, allowed: frozenset[str]):
        self.action = action
        self.allowed = allowed
        super().__init__(
            f"unknown action {action!r}; allowed: {', '.join(sorted(allowed)) or '(none)'}"
        )


def _normalize_action(text: str) -> str:
    # collapse internal whitespace (incl. line breaks) and lowercase
    return " ".join(text.split()).lower()


@dataclass(frozen=True)
class ActionEnvelope:
    """One parsed agent turn.

    Fields are normalized on construction: thought and action_input are
    stripped of surrounding whitespace (interior line breaks preserved),
    the action token is whitespace-collapsed and lowercased.
    """

    thought: str
    action: str
    action_input: str

    def __post_init__(self):
        object.__setattr__(self, "thought", self.thought.strip())
        object.__setattr__(self, "action", _normalize_action(self.action))
        object.__setattr__(self, "action_input", self.action_input.strip())
        for name in ("thought", "action", "action_input"):
            if not getattr(self, name):
                raise ValueError(f"envelope field {name} is empty")


@dataclass(frozen=True)
class RoleGrammar:
    role: Role
    allowed_actions: frozenset[str] = field(default_factory=frozenset)


_REGISTRY: dict[Role, frozenset[str]] = {
    Role.RESEARCHER: frozenset({ACTION_ARXIV, ACTION_FINAL_ANSWER}),
    Role.NOVELTY_SUPERVISOR: frozenset({ACTION_ACCEPT, ACTION_REJECT}),
    Role.JUDGE: frozenset({ACTION_ACCEPT, ACTION_REJECT}),
    Role.MEDIATOR: frozenset(),
    Role.EXPERT: frozenset({ACTION_PYTHEUS}),
}

GRAMMARS: dict[Role, RoleGrammar] = {
    role: RoleGrammar(role=role, allowed_actions=actions)
    for role, actions in _REGISTRY.items()
}


def allowed_actions(role: Role) -> frozenset[str]:
    """Action-name registry for a role.  Mediator turns are free text."""
    return _REGISTRY[role]


def grammar_for(role: Role) -> RoleGrammar:
    return GRAMMARS[role]


_THOUGHT_RE = re.compile(r"^[ \t]*Thought:", re.MULTILINE)
_ACTION_RE = re.compile(r"^[ \t]*Action:", re.MULTILINE)
_INPUT_RE = re.compile(r"^[ \t]*Action Input:", re.MULTILINE)


def parse_envelope(raw: str, grammar: RoleGrammar) -> ActionEnvelope:
    """Parse one complete agent turn into an envelope.

    Scans for the last well-ordered (Thought, Action, Action Input)
    marker triple and takes each section as the text between markers.
    Raises MissingSection when no triple exists or a section is blank,
    UnknownAction when the action token is outside the grammar.
    """
    thoughts = list(_THOUGHT_RE.finditer(raw))
    actions = list(_ACTION_RE.finditer(raw))
    inputs = list(_INPUT_RE.finditer(raw))

    if not thoughts:
        raise MissingSection("Thought")
    if not actions:
        raise MissingSection("Action")
    if not inputs:
        raise MissingSection("Action Input")

    # last well-ordered triple: maximize the Action Input position, then
    # the Action position before it, then the Thought position before that
    triple = None
    for inp in reversed(inputs):
        acts = [a for a in actions if a.start() < inp.start()]
        if not acts:
            continue
        for act in reversed(acts):
            ths = [t for t in thoughts if t.start() < act.start()]
            if ths:
                triple = (ths[-1], act, inp)
                break
        if triple:
            break
    if triple is None:
        raise MissingSection("Thought/Action/Action Input", "markers out of order")

    th, act, inp = triple
    thought = raw[th.end() : act.start()].strip()
    action = _normalize_action(raw[act.end() : inp.start()])
    action_input = raw[inp.end() :].strip()

    if not thought:
        raise MissingSection("Thought", "empty")
    if not action:
        raise MissingSection("Action", "empty")
    if not action_input:
        raise MissingSection("Action Input", "empty")
    if action not in grammar.allowed_actions:
        raise UnknownAction(action, grammar.allowed_actions)

    return ActionEnvelope(thought=thought, action=action, action_input=action_input)


def render_envelope(env: ActionEnvelope) -> str:
    """Canonical three-section text, one blank line between sections."""
    return (
        f"Thought: {env.thought}\n"
        f"\n"
        f"Action: {env.action}\n"
        f"\n"
        f"Action Input: {env.action_input}\n"
    )

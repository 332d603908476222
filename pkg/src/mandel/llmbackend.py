"""Chat-completion backends: live HTTP, scripted replay, and recording.

The orchestration layer only ever sees ``complete(ChatRequest) ->
ChatResponse``, so every test can swap the live backend for a replay
script.  Scripts are JSONL, one record per exchange, fingerprinted by
sequence index plus the role of the last request message; a mismatch
means the conversation diverged from the recording and is an error, not
a silent continue.

Credentials come from the environment only and are never written to
scripts, logs, or reprs.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

VALID_ROLES = ("system", "user", "assistant")


class BackendError(Exception):
    pass


class TransportError(BackendError):
    pass


class AuthError(BackendError):
    pass


class ScriptExhausted(BackendError):
    pass


class FingerprintMismatch(BackendError):
    pass


class ScriptFormatError(BackendError):
    def __init__(self, path: str, line_no: int, detail: str):
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {detail}")


class ReplayConcurrencyError(BackendError):
    """Replay backends are strictly sequential; concurrent use is a bug."""


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[tuple[str, str], ...]
    model: str
    temperature: float = 1.0

    def __post_init__(self):
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.messages[0][0] != "system":
            raise ValueError("first message must be system-tagged")
        for role, _ in self.messages:
            if role not in VALID_ROLES:
                raise ValueError(f"invalid message role {role!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @property
    def last_role(self) -> str:
        return self.messages[-1][0]


@dataclass(frozen=True)
class ChatResponse:
    content: str
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self):
        if not self.content:
            raise ValueError("response content must be non-empty")
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be >= 0")


@dataclass(frozen=True)
class ScriptRecord:
    index: int
    last_role: str
    response: str


@dataclass
class ReplayScript:
    records: list[ScriptRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def save(self, path: str | Path) -> None:
        lines = []
        for rec in self.records:
            lines.append(
                json.dumps(
                    {"index": rec.index, "last_role": rec.last_role, "response": rec.response},
                    ensure_ascii=False,
                )
            )
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_script(path: str | Path) -> ReplayScript:
    """Load a JSONL replay script; format errors name the line."""
    records: list[ScriptRecord] = []
    text = Path(path).read_text(encoding="utf-8")
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except ValueError as exc:
            raise ScriptFormatError(str(path), line_no, f"not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise ScriptFormatError(str(path), line_no, "record must be an object")
        try:
            rec = ScriptRecord(
                index=int(doc["index"]),
                last_role=str(doc["last_role"]),
                response=str(doc["response"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ScriptFormatError(str(path), line_no, f"bad record: {exc}") from exc
        records.append(rec)
    return ReplayScript(records=records)


class ReplayBackend:
    """Plays back a recorded script, strictly in order."""

    def __init__(self, script: ReplayScript):
        self._script = script
        self._pos = 0
        self._gate = threading.Lock()

    @property
    def position(self) -> int:
        return self._pos

    def complete(self, request: ChatRequest) -> ChatResponse:
        if not self._gate.acquire(blocking=False):
            raise ReplayConcurrencyError("replay backend called concurrently")
        try:
            if self._pos >= len(self._script.records):
                raise ScriptExhausted(
                    f"script exhausted after {self._pos} exchanges"
                )
            rec = self._script.records[self._pos]
            if rec.index != self._pos or rec.last_role != request.last_role:
                raise FingerprintMismatch(
                    f"exchange {self._pos}: script expects (index={rec.index}, "
                    f"last_role={rec.last_role!r}), request has (index={self._pos}, "
                    f"last_role={request.last_role!r})"
                )
            self._pos += 1
            return ChatResponse(content=rec.response)
        finally:
            self._gate.release()


class RecordingBackend:
    """Wraps a backend and appends each exchange to a script file."""

    def __init__(self, inner, path: str | Path):
        self._inner = inner
        self._path = Path(path)
        self._index = 0
        self._lock = threading.Lock()
        self._path.parent.mkdir(parents=True, exist_ok=True)
        self._path.write_text("", encoding="utf-8")

    def complete(self, request: ChatRequest) -> ChatResponse:
        response = self._inner.complete(request)
        with self._lock:
            record = {
                "index": self._index,
                "last_role": request.last_role,
                "response": response.content,
            }
            with open(self._path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record, ensure_ascii=False) + "\n")
            self._index += 1
        return response


def record_session(live_backend, path: str | Path) -> RecordingBackend:
    """Capture a live session into a script replayable later."""
    return RecordingBackend(live_backend, path)


class LiveBackend:
    """JSON-over-HTTP chat completions with bounded retry.

    Retries (3 attempts, exponential backoff starting at 1s) apply only
    to transport-level failures: connection errors, timeouts, and 5xx
    responses.  401/403 raise AuthError immediately.
    """

    RETRIES = 3
    BACKOFF_S = 1.0

    def __init__(
        self,
        endpoint: str,
        api_key: str = "",
        timeout: float = 120.0,
        max_in_flight: int = 4,
        sleep: Callable[[float], None] = time.sleep,
        session=None,
    ):
        self._endpoint = endpoint
        self._api_key = api_key
        self._timeout = timeout
        self._sleep = sleep
        self._slots = threading.Semaphore(max_in_flight)
        if session is None:
            import requests

            session = requests.Session()
        self._session = session

    def __repr__(self):
        return f"LiveBackend(endpoint={self._endpoint!r}, api_key=<redacted>)"

    def complete(self, request: ChatRequest) -> ChatResponse:
        payload = {
            "model": request.model,
            "messages": [{"role": r, "content": c} for r, c in request.messages],
            "temperature": request.temperature,
        }
        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"

        import requests

        last_error: Exception | None = None
        with self._slots:
            for attempt in range(self.RETRIES):
                if attempt:
                    self._sleep(self.BACKOFF_S * (2 ** (attempt - 1)))
                try:
                    resp = self._session.post(
                        self._endpoint, json=payload, headers=headers, timeout=self._timeout
                    )
                except (requests.ConnectionError, requests.Timeout) as exc:
                    last_error = exc
                    continue
                if resp.status_code in (401, 403):
                    raise AuthError(f"authentication rejected (HTTP {resp.status_code})")
                if resp.status_code >= 500:
                    last_error = TransportError(f"server error HTTP {resp.status_code}")
                    continue
                if resp.status_code != 200:
                    raise TransportError(f"unexpected HTTP {resp.status_code}: {resp.text[:200]}")
                return _parse_completion(resp)
        raise TransportError(f"transport failed after {self.RETRIES} attempts: {last_error}")


def _parse_completion(resp) -> ChatResponse:
    try:
        doc = resp.json()
        content = doc["choices"][0]["message"]["content"]
        usage = doc.get("usage") or {}
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"malformed completion response: {exc}") from exc
    if not content:
        raise TransportError("empty completion content")
    return ChatResponse(
        content=content,
        prompt_tokens=int(usage.get("prompt_tokens", 0)),
        completion_tokens=int(usage.get("completion_tokens", 0)),
    )

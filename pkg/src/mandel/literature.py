"""arXiv search plus a local abstract corpus for seed sampling.

The live client talks to the public export query endpoint and parses its
Atom feed; the corpus is an operator-supplied JSONL file (one object per
line with arxiv_id / title / abstract).  Live calls respect the service's
etiquette of at least 3 seconds between requests; tests inject canned
feeds and never touch the network.
"""

from __future__ import annotations

import json
import threading
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence
from urllib.parse import urlencode

ARXIV_ENDPOINT = "http://export.arxiv.org/api/query"
_ATOM_NS = {"atom": "http://www.w3.org/2005/Atom"}


class LiteratureError(Exception):
    pass


class TransportError(LiteratureError):
    pass


class FeedParseError(LiteratureError):
    pass


class CorpusFormatError(LiteratureError):
    def __init__(self, path: str, line_no: int, detail: str):
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {detail}")


class DuplicateIdError(LiteratureError):
    pass


class CorpusTooSmall(LiteratureError):
    pass


@dataclass(frozen=True)
class AbstractRecord:
    arxiv_id: str
    title: str
    abstract: str


class Corpus:
    """Immutable after load; ids unique."""

    def __init__(self, records: Sequence[AbstractRecord]):
        seen: set[str] = set()
        for rec in records:
            if rec.arxiv_id in seen:
                raise DuplicateIdError(f"duplicate arxiv_id {rec.arxiv_id!r}")
            seen.add(rec.arxiv_id)
        self._records = tuple(records)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    @property
    def records(self) -> tuple[AbstractRecord, ...]:
        return self._records


def load_corpus(path: str | Path) -> Corpus:
    """Load a JSONL corpus; format errors name the line, duplicate ids reject."""
    return corpus_from_text(Path(path).read_text(encoding="utf-8"), source=str(path))


def corpus_from_text(text: str, source: str = "<corpus>") -> Corpus:
    records: list[AbstractRecord] = []
    path = source
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except ValueError as exc:
            raise CorpusFormatError(str(path), line_no, f"not valid JSON: {exc}") from exc
        if not isinstance(doc, dict):
            raise CorpusFormatError(str(path), line_no, "record must be an object")
        try:
            rec = AbstractRecord(
                arxiv_id=str(doc["arxiv_id"]),
                title=str(doc["title"]),
                abstract=str(doc["abstract"]),
            )
        except KeyError as exc:
            raise CorpusFormatError(str(path), line_no, f"missing field {exc}") from exc
        if not rec.arxiv_id:
            raise CorpusFormatError(str(path), line_no, "arxiv_id must be non-empty")
        records.append(rec)
    return Corpus(records)


def save_corpus(corpus: Corpus, path: str | Path) -> None:
    lines = [
        json.dumps(
            {"arxiv_id": r.arxiv_id, "title": r.title, "abstract": r.abstract},
            ensure_ascii=False,
        )
        for r in corpus
    ]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def sample_seed_abstracts(corpus: Corpus, k: int = 3, rng=None) -> list[AbstractRecord]:
    """k distinct records, uniform without replacement under the seeded rng."""
    if rng is None:
        import random

        rng = random.Random()
    if len(corpus) < k:
        raise CorpusTooSmall(f"corpus has {len(corpus)} records, need {k}")
    return rng.sample(list(corpus.records), k)


def parse_atom_feed(xml_text: str) -> list[AbstractRecord]:
    """Entries of an Atom feed as (id, title, summary), feed order preserved."""
    try:
        root = ET.fromstring(xml_text)
    except ET.ParseError as exc:
        raise FeedParseError(f"not well-formed Atom XML: {exc}") from exc
    out: list[AbstractRecord] = []
    for entry in root.findall("atom:entry", _ATOM_NS):
        arxiv_id = (entry.findtext("atom:id", default="", namespaces=_ATOM_NS) or "").strip()
        title = (entry.findtext("atom:title", default="", namespaces=_ATOM_NS) or "").strip()
        summary = (entry.findtext("atom:summary", default="", namespaces=_ATOM_NS) or "").strip()
        out.append(AbstractRecord(arxiv_id=arxiv_id, title=title, abstract=summary))
    return out


def _http_fetch(url: str, timeout: float) -> str:
    import requests

    try:
        resp = requests.get(url, timeout=timeout)
        resp.raise_for_status()
    except requests.RequestException as exc:
        raise TransportError(f"arXiv request failed: {exc}") from exc
    return resp.text


class ArxivClient:
    """Search client with per-(query, limit) caching and rate limiting.

    ``fetch`` maps a URL to raw feed text; tests swap it for canned data.
    """

    def __init__(
        self,
        fetch: Callable[[str, float], str] = _http_fetch,
        endpoint: str = ARXIV_ENDPOINT,
        rate_limit_s: float = 3.0,
        timeout: float = 30.0,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ):
        self._fetch = fetch
        self._endpoint = endpoint
        self._rate_limit_s = rate_limit_s
        self._timeout = timeout
        self._sleep = sleep
        self._clock = clock
        self._last_call: float | None = None
        self._cache: dict[tuple[str, int], list[AbstractRecord]] = {}
        self._lock = threading.Lock()

    def search(self, query: str, limit: int = 3) -> list[AbstractRecord]:
        """First `limit` feed entries for the query; cached per campaign."""
        if not query.strip():
            raise ValueError("query must be non-empty")
        key = (query, limit)
        with self._lock:
            if key in self._cache:
                return list(self._cache[key])
            if self._last_call is not None:
                elapsed = self._clock() - self._last_call
                if elapsed < self._rate_limit_s:
                    self._sleep(self._rate_limit_s - elapsed)
            url = f"{self._endpoint}?{urlencode({'search_query': query, 'max_results': limit})}"
            text = self._fetch(url, self._timeout)
            self._last_call = self._clock()
            records = parse_atom_feed(text)[:limit]
            self._cache[key] = records
            return list(records)


@dataclass
class Literature:
    """Bundle handed to the orchestration loop: seed corpus + search."""

    corpus: Corpus
    client: ArxivClient

    def sample_seeds(self, k: int, rng) -> list[AbstractRecord]:
        return sample_seed_abstracts(self.corpus, k, rng)

    def search(self, query: str, limit: int = 3) -> list[AbstractRecord]:
        return self.client.search(query, limit)

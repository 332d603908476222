"""Campaign statistics over the ledger: outcome funnel, agent-call
histograms, implementation success rates, cumulative concept novelty,
and 2-D PCA projections of abstract embeddings.

Everything here is a pure function of its inputs; recomputation always
yields identical output.  The report writer emits one machine-readable
JSON document plus per-figure CSV tables; plotting stays external.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import re
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .protocol import Role
from .store import read_jsonl

OUTCOME_CLASSES = ("FullReject", "NoveltyAccept", "FullAccept")

_ROLE_FIELD = {
    Role.RESEARCHER: "researcher_calls",
    Role.NOVELTY_SUPERVISOR: "novelty_calls",
    Role.JUDGE: "judge_calls",
    Role.MEDIATOR: "mediator_calls",
}


class AnalyticsError(Exception):
    pass


class DegenerateData(AnalyticsError):
    """Input carries no variance; there is nothing to project."""


@dataclass
class CampaignLedger:
    """Immutable view over ledger records, split by record type."""

    idea_runs: list[dict] = field(default_factory=list)
    implementations: list[dict] = field(default_factory=list)

    @classmethod
    def from_records(cls, records: Iterable[dict]) -> "CampaignLedger":
        ledger = cls()
        for rec in records:
            kind = rec.get("type")
            if kind == "idea_run":
                ledger.idea_runs.append(rec)
            elif kind == "implementation":
                ledger.implementations.append(rec)
        return ledger


def load_ledger(path: str | Path) -> CampaignLedger:
    return CampaignLedger.from_records(read_jsonl(path))


def compute_funnel(ledger: CampaignLedger) -> dict[str, int]:
    """Counts per outcome class; the three always sum to the run count."""
    counts = {cls: 0 for cls in OUTCOME_CLASSES}
    for rec in ledger.idea_runs:
        outcome = rec["outcome"]
        if outcome not in counts:
            raise AnalyticsError(f"unknown outcome class {outcome!r}")
        counts[outcome] += 1
    return counts


def histogram_agent_calls(ledger: CampaignLedger, role: Role) -> dict[int, int]:
    """Map call-count -> number of runs with that count for the role.

    Idea-generation roles are counted over idea runs; the Expert over
    implementation runs.
    """
    hist: dict[int, int] = {}
    if role is Role.EXPERT:
        for rec in ledger.implementations:
            n = rec["expert_calls"]
            hist[n] = hist.get(n, 0) + 1
    else:
        key = _ROLE_FIELD[role]
        for rec in ledger.idea_runs:
            n = rec[key]
            hist[n] = hist.get(n, 0) + 1
    return dict(sorted(hist.items()))


def histogram_expert_calls(ledger: CampaignLedger) -> dict[int, tuple[int, int]]:
    """Expert-call histogram split into (successful, unsuccessful) runs."""
    hist: dict[int, list[int]] = {}
    for rec in ledger.implementations:
        n = rec["expert_calls"]
        slot = hist.setdefault(n, [0, 0])
        slot[0 if rec["success"] else 1] += 1
    return {n: (s, u) for n, (s, u) in sorted(hist.items())}


@dataclass(frozen=True)
class SuccessRate:
    successes: int
    attempts: int

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.successes, self.attempts)

    @property
    def decimal(self) -> float:
        return self.successes / self.attempts


def success_rate_by_class(ledger: CampaignLedger) -> dict[str, SuccessRate]:
    """Implementation success per source outcome class, plus overall.

    Classes with zero attempts are absent rather than divided by zero.
    """
    tallies: dict[str, list[int]] = {}
    for rec in ledger.implementations:
        cls = rec.get("source_outcome", "FullAccept")
        slot = tallies.setdefault(cls, [0, 0])
        slot[1] += 1
        if rec["success"]:
            slot[0] += 1
    rates = {
        cls: SuccessRate(successes=s, attempts=a)
        for cls, (s, a) in sorted(tallies.items())
        if a > 0
    }
    total_s = sum(r.successes for r in rates.values())
    total_a = sum(r.attempts for r in rates.values())
    if total_a > 0:
        rates["overall"] = SuccessRate(successes=total_s, attempts=total_a)
    return rates


def cumulative_new_concepts(
    abstracts: Sequence[str], concept_list: Sequence[str], whole_word: bool = False
) -> list[int]:
    """Element k = distinct concepts first mentioned in abstracts 1..k.

    Matching is case-insensitive substring by default; whole_word wraps
    the phrase in word boundaries instead.
    """
    seen: set[str] = set()
    curve: list[int] = []
    patterns = None
    if whole_word:
        patterns = {
            c: re.compile(r"\b" + re.escape(c.lower()) + r"\b") for c in concept_list
        }
    for text in abstracts:
        lowered = text.lower()
        for concept in concept_list:
            if concept in seen:
                continue
            if whole_word:
                hit = bool(patterns[concept].search(lowered))
            else:
                hit = concept.lower() in lowered
            if hit:
                seen.add(concept)
        curve.append(len(seen))
    return curve


@dataclass
class Projection:
    coordinates: np.ndarray  # n x k
    components: np.ndarray  # k x d, orthonormal rows
    variances: np.ndarray  # k, non-increasing


def _dominant_eigenvector(
    cov: np.ndarray, prior: list[np.ndarray], max_iter: int = 50000, tol: float = 1e-14
) -> tuple[np.ndarray, float]:
    """Power iteration with explicit re-orthogonalization against prior
    components (deflation by projection)."""
    d = cov.shape[0]

    def orthogonalize(vec: np.ndarray) -> np.ndarray:
        for p in prior:
            vec = vec - (vec @ p) * p
        return vec

    # deterministic start: the coordinate direction with the largest
    # remaining diagonal mass, falling back across the basis if needed
    order = np.argsort(-np.diag(cov))
    v = None
    for idx in order:
        candidate = orthogonalize(np.eye(d)[idx])
        norm = np.linalg.norm(candidate)
        if norm > 1e-12:
            v = candidate / norm
            break
    if v is None:
        raise DegenerateData("no independent direction left for another component")

    last = 0.0
    for _ in range(max_iter):
        w = orthogonalize(cov @ v)
        norm = np.linalg.norm(w)
        if norm < 1e-300:
            # deflated matrix annihilates v: zero-variance direction
            return v, 0.0
        v = w / norm
        lam = float(v @ cov @ v)
        if abs(lam - last) <= tol * max(1.0, abs(lam)):
            residual = np.linalg.norm(orthogonalize(cov @ v) - lam * v)
            if residual <= 1e-10 * max(1.0, abs(lam)):
                break
        last = lam
    v = orthogonalize(v)
    v = v / np.linalg.norm(v)
    lam = float(v @ cov @ v)
    return v, lam


def pca_project(matrix, k: int = 2) -> Projection:
    """Top-k principal components of the row observations.

    Mean-centers internally, eigen-decomposes the sample covariance by
    power iteration with deflation, and fixes each component's sign so
    its largest-magnitude entry is positive.
    """
    X = np.asarray(matrix, dtype=float)
    if X.ndim != 2:
        raise ValueError("expected a 2-D matrix")
    n, d = X.shape
    if n < 2:
        raise ValueError("need at least 2 rows")
    if d < k:
        raise ValueError(f"need at least {k} columns, got {d}")
    Xc = X - X.mean(axis=0)
    cov = (Xc.T @ Xc) / (n - 1)
    if float(np.trace(cov)) <= 1e-300:
        raise DegenerateData("data has zero variance")

    components: list[np.ndarray] = []
    variances: list[float] = []
    for _ in range(k):
        v, lam = _dominant_eigenvector(cov, components)
        imax = int(np.argmax(np.abs(v)))
        if v[imax] < 0:
            v = -v
        components.append(v)
        variances.append(max(lam, 0.0))

    comp = np.vstack(components)
    var = np.array(variances)
    order = np.argsort(-var, kind="stable")
    comp = comp[order]
    var = var[order]
    coords = Xc @ comp.T
    return Projection(coordinates=coords, components=comp, variances=var)


class OfflineEmbedder:
    """Deterministic feature-hashing of token n-grams; no network, no state.

    sha1-based hashing keeps rows stable across processes and platforms.
    """

    def __init__(self, dim: int = 256, max_ngram: int = 3):
        self.dim = dim
        self.max_ngram = max_ngram

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        rows = np.zeros((len(texts), self.dim))
        for i, text in enumerate(texts):
            tokens = re.findall(r"[a-z0-9]+", text.lower())
            for n in range(1, self.max_ngram + 1):
                for j in range(len(tokens) - n + 1):
                    gram = " ".join(tokens[j : j + n])
                    h = int.from_bytes(
                        hashlib.sha1(gram.encode("utf-8")).digest()[:8], "big"
                    )
                    sign = 1.0 if (h >> 8) & 1 else -1.0
                    rows[i, h % self.dim] += sign
            norm = np.linalg.norm(rows[i])
            if norm > 0:
                rows[i] /= norm
        return rows


class HttpEmbedder:
    """Remote embedding endpoint speaking the de-facto embeddings schema."""

    def __init__(self, endpoint: str, model: str, api_key: str = "", timeout: float = 120.0):
        self._endpoint = endpoint
        self._model = model
        self._api_key = api_key
        self._timeout = timeout

    def __repr__(self):
        return f"HttpEmbedder(endpoint={self._endpoint!r}, api_key=<redacted>)"

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        import requests

        headers = {"Content-Type": "application/json"}
        if self._api_key:
            headers["Authorization"] = f"Bearer {self._api_key}"
        try:
            resp = requests.post(
                self._endpoint,
                json={"model": self._model, "input": list(texts)},
                headers=headers,
                timeout=self._timeout,
            )
            resp.raise_for_status()
            doc = resp.json()
            rows = [item["embedding"] for item in doc["data"]]
        except (requests.RequestException, KeyError, TypeError, ValueError) as exc:
            raise AnalyticsError(f"embedding request failed: {exc}") from exc
        return np.asarray(rows, dtype=float)


def embed_abstracts(abstracts: Sequence[str], backend=None) -> np.ndarray:
    """One row per abstract; identical abstracts give identical rows."""
    if backend is None:
        backend = OfflineEmbedder()
    return backend.embed(abstracts)


def _write_csv(path: Path, header: list[str], rows: Iterable[Iterable]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(list(row))
    path.write_text(buf.getvalue(), encoding="utf-8")


def write_report(
    ledger: CampaignLedger,
    out_dir: str | Path,
    concepts: Sequence[str] = (),
    embedder=None,
) -> dict:
    """Emit the full analytics bundle into out_dir and return report.json's
    payload.  Deterministic: rerunning over the same ledger is
    byte-identical."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    funnel = compute_funnel(ledger)
    _write_csv(
        out / "funnel.csv", ["outcome", "count"], [(cls, funnel[cls]) for cls in OUTCOME_CLASSES]
    )

    histograms: dict[str, dict[int, int]] = {}
    for role in (Role.RESEARCHER, Role.NOVELTY_SUPERVISOR, Role.JUDGE, Role.MEDIATOR):
        hist = histogram_agent_calls(ledger, role)
        histograms[role.value] = hist
        _write_csv(out / f"hist_{role.value}.csv", ["calls", "runs"], sorted(hist.items()))
    expert_hist = histogram_expert_calls(ledger)
    _write_csv(
        out / "hist_expert.csv",
        ["calls", "successful", "unsuccessful"],
        [(n, s, u) for n, (s, u) in expert_hist.items()],
    )

    rates = success_rate_by_class(ledger)
    _write_csv(
        out / "success_rates.csv",
        ["class", "successes", "attempts", "rate"],
        [
            (cls, r.successes, r.attempts, repr(r.decimal))
            for cls, r in rates.items()
        ],
    )

    abstracts = [rec.get("abstract", "") for rec in ledger.idea_runs]
    curve = cumulative_new_concepts(abstracts, concepts)
    _write_csv(out / "concept_curve.csv", ["index", "new_concepts_cumulative"], enumerate(curve, 1))

    proj_rows: list[tuple] = []
    explained: list[float] = []
    if len(abstracts) >= 2:
        emb = embed_abstracts(abstracts, backend=embedder)
        try:
            projection = pca_project(emb, k=2)
        except DegenerateData:
            projection = None
        if projection is not None:
            explained = [float(v) for v in projection.variances]
            for rec, (x, y) in zip(ledger.idea_runs, projection.coordinates):
                proj_rows.append(
                    (rec.get("idea_id") or rec["run_id"], repr(float(x)), repr(float(y)), rec["outcome"])
                )
    _write_csv(out / "projection.csv", ["id", "x", "y", "outcome"], proj_rows)

    payload = {
        "runs": len(ledger.idea_runs),
        "implementations": len(ledger.implementations),
        "funnel": funnel,
        "histograms": {
            **{name: {str(k): v for k, v in hist.items()} for name, hist in histograms.items()},
            "expert": {str(n): {"successful": s, "unsuccessful": u} for n, (s, u) in expert_hist.items()},
        },
        "success_rates": {
            cls: {"successes": r.successes, "attempts": r.attempts, "rate": r.decimal}
            for cls, r in rates.items()
        },
        "concept_curve": curve,
        "projection_explained_variance": explained,
    }
    (out / "report.json").write_text(
        json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
    )
    return payload

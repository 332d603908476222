"""Typed model, validator, differ, and canonical serializer for design-tool configs.

A config is a flat JSON object.  The field roster is closed: anything
outside it is a parse error, because the config-writing agent must learn
the real vocabulary rather than have typos silently accepted.

Derived sizing rule used throughout: with L the (shared) length of the
target ket strings and ``num_anc`` the ancilla count, the experiment has
V = L + num_anc vertices, and every vertex index must lie in [0, V).
Input/output node indices are restricted further to [0, L).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields as dc_fields
from importlib import resources
from typing import Any, Iterator


class _Absent:
    """Sentinel for a field not present in the source document."""

    _singleton = None

    def __new__(cls):
        if cls._singleton is None:
            cls._singleton = super().__new__(cls)
        return cls._singleton

    def __repr__(self):
        return "ABSENT"

    def __bool__(self):
        return False


ABSENT = _Absent()


class ConfigError(Exception):
    """Base class for config parse failures."""


class ConfigSyntaxError(ConfigError):
    """Input is not a well-formed flat JSON object."""


class UnknownFieldError(ConfigError):
    def __init__(self, field_name: str):
        self.field_name = field_name
        super().__init__(f"unknown field: {field_name!r}")


class TypeMismatchError(ConfigError):
    def __init__(self, field_name: str, expected: str, got: Any):
        self.field_name = field_name
        self.expected = expected
        super().__init__(
            f"field {field_name!r}: expected {expected}, got {type(got).__name__} ({got!r})"
        )


# value kinds understood by the parser's structural checks
_TEXT = "text"
_REAL = "real"
_INT = "int"
_BOOL = "bool"
_KET_LIST = "ket list"
_INT_LIST = "int list"
_REAL_LIST = "real list"
_PAIR_LIST = "pair list"
_BOOL_OR_NULL = "bool or null"
_INT_OR_NULL = "int or null"

# canonical roster order: the base listing order, extended by optional fields
_ROSTER: list[tuple[str, str, bool]] = [
    # (name, kind, required)
    ("description", _TEXT, True),
    ("foldername", _TEXT, True),
    ("bulk_thr", _REAL, True),
    ("edges_tried", _INT, True),
    ("ftol", _REAL, True),
    ("loss_func", _TEXT, True),
    ("num_anc", _INT, True),
    ("num_pre", _INT, True),
    ("optimizer", _TEXT, True),
    ("imaginary", _BOOL, True),
    ("safe_hist", _BOOL, True),
    ("samples", _INT, True),
    ("target_quantum", _KET_LIST, True),
    ("in_nodes", _INT_LIST, True),
    ("out_nodes", _INT_LIST, True),
    ("thresholds", _REAL_LIST, True),
    ("heralding_out", _BOOL_OR_NULL, False),
    ("single_emitters", _INT_LIST, False),
    ("amplitudes", _REAL_LIST, False),
    ("tries_per_edge", _INT, True),
    ("removed_connections", _PAIR_LIST, True),
    ("number_resolving", _BOOL, True),
    ("seed", _INT_OR_NULL, False),
    ("unicolor", _BOOL_OR_NULL, False),
    ("novac", _BOOL_OR_NULL, False),
    ("loops", _BOOL_OR_NULL, False),
    ("topopt", _BOOL_OR_NULL, False),
    ("dimensions", _INT_LIST, False),
    ("brutal_covers", _BOOL_OR_NULL, False),
    ("verts", _INT_LIST, False),
    ("anc_detectors", _INT_LIST, False),
]

ROSTER_ORDER: list[str] = [name for name, _, _ in _ROSTER]
REQUIRED_FIELDS: list[str] = [name for name, _, req in _ROSTER if req]
_KIND: dict[str, str] = {name: kind for name, kind, _ in _ROSTER}

# fields holding plain vertex indices, checked against [0, V)
VERTEX_LIST_FIELDS = ("single_emitters", "verts", "anc_detectors")
# fields holding non-ancilla mode indices, checked against [0, L)
IN_OUT_FIELDS = ("in_nodes", "out_nodes")


@dataclass(frozen=True)
class DesignConfig:
    """Flat configuration record; absent optional fields stay ABSENT.

    Absent and explicit-null are distinct states and are never coerced
    into each other.
    """

    description: Any = ABSENT
    foldername: Any = ABSENT
    bulk_thr: Any = ABSENT
    edges_tried: Any = ABSENT
    ftol: Any = ABSENT
    loss_func: Any = ABSENT
    num_anc: Any = ABSENT
    num_pre: Any = ABSENT
    optimizer: Any = ABSENT
    imaginary: Any = ABSENT
    safe_hist: Any = ABSENT
    samples: Any = ABSENT
    target_quantum: Any = ABSENT
    in_nodes: Any = ABSENT
    out_nodes: Any = ABSENT
    thresholds: Any = ABSENT
    heralding_out: Any = ABSENT
    single_emitters: Any = ABSENT
    amplitudes: Any = ABSENT
    tries_per_edge: Any = ABSENT
    removed_connections: Any = ABSENT
    number_resolving: Any = ABSENT
    seed: Any = ABSENT
    unicolor: Any = ABSENT
    novac: Any = ABSENT
    loops: Any = ABSENT
    topopt: Any = ABSENT
    dimensions: Any = ABSENT
    brutal_covers: Any = ABSENT
    verts: Any = ABSENT
    anc_detectors: Any = ABSENT

    def present(self, name: str) -> bool:
        return getattr(self, name) is not ABSENT

    def present_fields(self) -> Iterator[tuple[str, Any]]:
        """(name, value) pairs of present fields, in roster order."""
        for name in ROSTER_ORDER:
            value = getattr(self, name)
            if value is not ABSENT:
                yield name, value

    def to_dict(self) -> dict[str, Any]:
        return dict(self.present_fields())

    def replace(self, **changes: Any) -> "DesignConfig":
        data = {f.name: getattr(self, f.name) for f in dc_fields(self)}
        data.update(changes)
        return DesignConfig(**data)

    def ket_length(self) -> int | None:
        """Shared ket length L, taken from the first ket; None if undefined."""
        tq = self.target_quantum
        if tq is ABSENT or not isinstance(tq, list) or not tq:
            return None
        return len(tq[0])

    def vertex_count(self) -> int | None:
        """V = L + num_anc; None when either ingredient is unusable."""
        length = self.ket_length()
        anc = self.num_anc
        if length is None or anc is ABSENT or not isinstance(anc, int) or anc < 0:
            return None
        return length + anc


def _is_real(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _check_kind(name: str, kind: str, value: Any) -> None:
    ok = False
    if kind == _TEXT:
        ok = isinstance(value, str)
    elif kind == _REAL:
        ok = _is_real(value)
    elif kind == _INT:
        ok = _is_int(value)
    elif kind == _BOOL:
        ok = isinstance(value, bool)
    elif kind == _KET_LIST:
        ok = isinstance(value, list) and all(isinstance(k, str) for k in value)
    elif kind == _INT_LIST:
        ok = isinstance(value, list) and all(_is_int(v) for v in value)
    elif kind == _REAL_LIST:
        ok = isinstance(value, list) and all(_is_real(v) for v in value)
    elif kind == _PAIR_LIST:
        ok = isinstance(value, list) and all(
            isinstance(p, list) and len(p) == 2 and all(_is_int(x) for x in p)
            for p in value
        )
    elif kind == _BOOL_OR_NULL:
        ok = value is None or isinstance(value, bool)
    elif kind == _INT_OR_NULL:
        ok = value is None or _is_int(value)
    if not ok:
        raise TypeMismatchError(name, kind, value)


def parse_config(raw: str) -> DesignConfig:
    """Parse config text into a DesignConfig.

    Absent optional fields are recorded as absent, never defaulted.
    Field completeness and value ranges are the validator's concern, so
    an incomplete-but-well-typed document still parses.
    """
    try:
        doc = json.loads(raw)
    except ValueError as exc:
        raise ConfigSyntaxError(f"not well-formed JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigSyntaxError(
            f"top-level value must be an object, got {type(doc).__name__}"
        )
    values: dict[str, Any] = {}
    for key, value in doc.items():
        if key not in _KIND:
            raise UnknownFieldError(key)
        _check_kind(key, _KIND[key], value)
        values[key] = value
    return DesignConfig(**values)


@dataclass(frozen=True)
class Finding:
    rule: str
    path: str
    message: str


@dataclass
class ValidationReport:
    errors: list[Finding] = field(default_factory=list)
    warnings: list[Finding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


# lower bounds for scalar fields: (minimum, inclusive)
_SCALAR_BOUNDS: dict[str, tuple[float, bool]] = {
    "bulk_thr": (0, True),
    "edges_tried": (1, True),
    "ftol": (0, False),
    "num_anc": (0, True),
    "num_pre": (0, True),
    "samples": (1, True),
    "tries_per_edge": (1, True),
}


def validate_config(cfg: DesignConfig) -> ValidationReport:
    """Check every structural invariant; findings go in the report, nothing raises.

    Errors make a config invalid; warnings never block.  Finding order
    is deterministic (fixed rule order, fields in roster order) so the
    first error is a stable choice for tool feedback.
    """
    errors: list[Finding] = []
    warnings: list[Finding] = []

    for name in REQUIRED_FIELDS:
        if not cfg.present(name):
            errors.append(Finding("missing-field", name, f"required field {name!r} is absent"))

    for name, (low, inclusive) in _SCALAR_BOUNDS.items():
        value = getattr(cfg, name)
        if value is ABSENT:
            continue
        bad = value < low if inclusive else value <= low
        if bad:
            op = ">=" if inclusive else ">"
            errors.append(Finding("field-range", name, f"{name} must be {op} {low}, got {value}"))

    if cfg.present("thresholds"):
        ths = cfg.thresholds
        if len(ths) != 2:
            errors.append(
                Finding("threshold-arity", "thresholds", f"expected exactly 2 entries, got {len(ths)}")
            )
        for i, t in enumerate(ths):
            if t <= 0:
                errors.append(
                    Finding("threshold-range", f"thresholds[{i}]", f"threshold must be > 0, got {t}")
                )
            elif t > 1:
                warnings.append(
                    Finding("threshold-high", f"thresholds[{i}]", f"threshold {t} lies outside (0, 1]")
                )

    length: int | None = None
    if cfg.present("target_quantum"):
        tq = cfg.target_quantum
        if not tq:
            errors.append(Finding("ket-empty", "target_quantum", "target_quantum must be non-empty"))
        else:
            length = len(tq[0])
            if length == 0:
                errors.append(
                    Finding("ket-length", "target_quantum[0]", "ket strings must have length >= 1")
                )
            for i, ket in enumerate(tq):
                if i > 0 and len(ket) != length:
                    errors.append(
                        Finding(
                            "ket-length",
                            f"target_quantum[{i}]",
                            f"ket length {len(ket)} differs from first ket length {length}",
                        )
                    )
                if not (ket.isdigit() or ket == ""):
                    errors.append(
                        Finding(
                            "ket-digits",
                            f"target_quantum[{i}]",
                            f"ket {ket!r} contains non-digit characters",
                        )
                    )

    vertex_count = cfg.vertex_count()

    if length is not None and length > 0:
        for name in IN_OUT_FIELDS:
            if not cfg.present(name):
                continue
            for i, v in enumerate(getattr(cfg, name)):
                if not 0 <= v < length:
                    errors.append(
                        Finding(
                            "in-out-range",
                            f"{name}[{i}]",
                            f"index {v} outside non-ancilla mode range [0, {length})",
                        )
                    )

    if cfg.present("in_nodes") and cfg.present("out_nodes"):
        overlap = sorted(set(cfg.in_nodes) & set(cfg.out_nodes))
        if overlap:
            errors.append(
                Finding(
                    "in-out-overlap",
                    "in_nodes/out_nodes",
                    f"in_nodes and out_nodes share indices {overlap}",
                )
            )

    if vertex_count is not None:
        for name in VERTEX_LIST_FIELDS:
            if not cfg.present(name):
                continue
            for i, v in enumerate(getattr(cfg, name)):
                if not 0 <= v < vertex_count:
                    errors.append(
                        Finding(
                            "vertex-range",
                            f"{name}[{i}]",
                            f"index {v} outside vertex range [0, {vertex_count})",
                        )
                    )
        if cfg.present("removed_connections"):
            for i, pair in enumerate(cfg.removed_connections):
                for j, v in enumerate(pair):
                    if not 0 <= v < vertex_count:
                        errors.append(
                            Finding(
                                "vertex-range",
                                f"removed_connections[{i}][{j}]",
                                f"index {v} outside vertex range [0, {vertex_count})",
                            )
                        )

    if cfg.present("removed_connections"):
        seen: set[tuple[int, int]] = set()
        for i, pair in enumerate(cfg.removed_connections):
            a, b = pair
            if a == b:
                errors.append(
                    Finding(
                        "pair-distinct",
                        f"removed_connections[{i}]",
                        f"pair [{a}, {b}] connects a vertex to itself",
                    )
                )
            key = (min(a, b), max(a, b))
            if key in seen:
                warnings.append(
                    Finding(
                        "duplicate-pair",
                        f"removed_connections[{i}]",
                        f"pair {list(pair)} duplicates an earlier pair (order-insensitive)",
                    )
                )
            seen.add(key)

    if cfg.present("amplitudes") and cfg.present("target_quantum"):
        amps = cfg.amplitudes
        if amps and len(amps) != len(cfg.target_quantum):
            errors.append(
                Finding(
                    "amplitude-arity",
                    "amplitudes",
                    f"amplitudes has {len(amps)} entries but target_quantum has "
                    f"{len(cfg.target_quantum)}; must be empty or match",
                )
            )

    if cfg.present("loss_func") and cfg.loss_func not in ("cr", "fid"):
        warnings.append(
            Finding("loss-func", "loss_func", f"unrecognized loss_func {cfg.loss_func!r}")
        )

    return ValidationReport(errors=errors, warnings=warnings)


def render_config(cfg: DesignConfig) -> str:
    """Canonical serialization: roster field order, two-space indent,
    lowercase literals, shortest round-trip floats, trailing newline.

    Two renders of equal configs are byte-identical.
    """
    return json.dumps(cfg.to_dict(), indent=2, ensure_ascii=False) + "\n"


@dataclass(frozen=True)
class ConfigChange:
    """One field-level difference.  kind is added / removed / changed;
    the missing side of added/removed carries ABSENT."""

    field: str
    kind: str
    old: Any
    new: Any


def diff_configs(a: DesignConfig, b: DesignConfig) -> list[ConfigChange]:
    """Field-level changes from a to b, in roster order; empty iff equal."""
    changes: list[ConfigChange] = []
    for name in ROSTER_ORDER:
        va = getattr(a, name)
        vb = getattr(b, name)
        if va is ABSENT and vb is ABSENT:
            continue
        if va is ABSENT:
            changes.append(ConfigChange(name, "added", ABSENT, vb))
        elif vb is ABSENT:
            changes.append(ConfigChange(name, "removed", va, ABSENT))
        elif va != vb:
            changes.append(ConfigChange(name, "changed", va, vb))
    return changes


def fixture_names() -> list[str]:
    """Names of the bundled reference configs, sorted."""
    root = resources.files("mandel") / "fixtures" / "appendix_b"
    return sorted(p.name[: -len(".json")] for p in root.iterdir() if p.name.endswith(".json"))


def load_fixture_text(name: str) -> str:
    path = resources.files("mandel") / "fixtures" / "appendix_b" / f"{name}.json"
    return path.read_text(encoding="utf-8")


def load_fixture(name: str) -> DesignConfig:
    return parse_config(load_fixture_text(name))

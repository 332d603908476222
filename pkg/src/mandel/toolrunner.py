"""Design-tool invocation: real subprocess bridge or deterministic stub.

Wire contract with the bridge executable (bit-exact): it is launched as
``<bridge-cmd> <config-path> <workdir>`` and must print exactly one line
of UTF-8 JSON on stdout, ``{"status": "success"|"error", "message": ...,
"artifacts": [...]}``, exiting 0 on success and nonzero otherwise.
Success is classified from the envelope plus artifact existence only;
the exit status is advisory.  Tool-side misbehavior (timeouts, protocol
violations) is reported as a Failure outcome so the debug loop can react,
never as a raised exception.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .configschema import DesignConfig, render_config, validate_config

BRIDGE_PROTOCOL_PREFIX = "bridge protocol error"


class ToolStatus(Enum):
    SUCCESS = "success"
    FAILURE = "failure"


@dataclass(frozen=True)
class ToolOutcome:
    status: ToolStatus
    message: str
    artifacts: tuple[str, ...] = ()

    def __post_init__(self):
        if self.status is ToolStatus.FAILURE and not self.message:
            raise ValueError("failure outcomes must carry an error message")
        if self.status is ToolStatus.SUCCESS and not self.artifacts:
            raise ValueError("success outcomes must list at least one artifact")

    @property
    def success(self) -> bool:
        return self.status is ToolStatus.SUCCESS


class FaultPlan:
    """Test harness state: force Failure on the first n calls."""

    def __init__(self, n: int):
        self.remaining = n

    def take(self) -> bool:
        if self.remaining > 0:
            self.remaining -= 1
            return True
        return False


def config_digest(cfg: DesignConfig) -> str:
    return hashlib.sha256(render_config(cfg).encode("utf-8")).hexdigest()


def stub_tool(
    cfg: DesignConfig,
    fault_plan: FaultPlan | None = None,
    workdir: str | Path | None = None,
) -> ToolOutcome:
    """Deterministic stand-in for the design tool.

    Invalid configs fail with the first validation finding; valid ones
    succeed with a single ``best_solution.json`` artifact containing the
    config digest.  The same config always yields a byte-identical
    message.
    """
    if fault_plan is not None and fault_plan.take():
        return ToolOutcome(ToolStatus.FAILURE, "injected fault: tool run did not converge")
    report = validate_config(cfg)
    if report.errors:
        first = report.errors[0]
        return ToolOutcome(
            ToolStatus.FAILURE, f"{first.rule} at {first.path}: {first.message}"
        )
    digest = config_digest(cfg)
    artifact_name = "best_solution.json"
    if workdir is not None:
        workdir = Path(workdir)
        workdir.mkdir(parents=True, exist_ok=True)
        artifact_path = workdir / artifact_name
        artifact_path.write_text(
            json.dumps({"config_digest": digest}, indent=2) + "\n", encoding="utf-8"
        )
        artifact_name = str(artifact_path)
    return ToolOutcome(
        ToolStatus.SUCCESS,
        f"stub run complete (config digest {digest[:16]})",
        artifacts=(artifact_name,),
    )


def _protocol_failure(detail: str) -> ToolOutcome:
    return ToolOutcome(ToolStatus.FAILURE, f"{BRIDGE_PROTOCOL_PREFIX}: {detail}")


def run_tool(
    cfg: DesignConfig,
    workdir: str | Path,
    backend: str = "stub",
    timeout: float = 600.0,
    bridge_cmd: list[str] | None = None,
    fault_plan: FaultPlan | None = None,
) -> ToolOutcome:
    """Invoke the design tool on a config inside an empty, writable workdir."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    if any(workdir.iterdir()):
        raise ValueError(f"workdir {workdir} is not empty")

    if backend == "stub":
        return stub_tool(cfg, fault_plan=fault_plan, workdir=workdir)
    if backend != "real":
        raise ValueError(f"unknown tool backend {backend!r}")
    if not bridge_cmd:
        raise ValueError("real tool backend requires bridge_cmd")

    config_path = workdir / "config.json"
    config_path.write_text(render_config(cfg), encoding="utf-8")
    cmd = list(bridge_cmd) + [str(config_path), str(workdir)]
    try:
        proc = subprocess.run(
            cmd, capture_output=True, text=True, timeout=timeout, cwd=str(workdir)
        )
    except subprocess.TimeoutExpired:
        return ToolOutcome(ToolStatus.FAILURE, f"tool timed out after {timeout:g}s")
    except OSError as exc:
        return _protocol_failure(f"could not launch bridge: {exc}")

    lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
    if len(lines) != 1:
        return _protocol_failure(
            f"expected exactly one envelope line on stdout, got {len(lines)}"
        )
    try:
        envelope = json.loads(lines[0])
    except ValueError as exc:
        return _protocol_failure(f"unparseable envelope: {exc}")
    if not isinstance(envelope, dict):
        return _protocol_failure("envelope is not a JSON object")

    status = envelope.get("status")
    message = envelope.get("message")
    artifacts = envelope.get("artifacts")
    if status not in ("success", "error") or not isinstance(message, str) or not isinstance(
        artifacts, list
    ):
        return _protocol_failure(f"envelope fields invalid: {lines[0][:200]}")

    if status == "error":
        return ToolOutcome(ToolStatus.FAILURE, message or "tool reported an error")

    if not artifacts:
        return _protocol_failure("success envelope lists no artifacts")
    resolved: list[str] = []
    for a in artifacts:
        p = Path(a)
        if not p.is_absolute():
            p = workdir / p
        if not p.exists():
            return _protocol_failure(f"declared artifact missing on disk: {a}")
        resolved.append(str(p))
    return ToolOutcome(ToolStatus.SUCCESS, message or "tool run succeeded", tuple(resolved))


@dataclass
class StubTool:
    """Tool handle for the orchestration loop (stub flavor)."""

    fault_plan: FaultPlan | None = None

    def run(self, cfg: DesignConfig, workdir: str | Path) -> ToolOutcome:
        return run_tool(cfg, workdir, backend="stub", fault_plan=self.fault_plan)


@dataclass
class RealTool:
    """Tool handle launching the external bridge."""

    bridge_cmd: list[str] = field(default_factory=list)
    timeout: float = 600.0

    def run(self, cfg: DesignConfig, workdir: str | Path) -> ToolOutcome:
        return run_tool(
            cfg, workdir, backend="real", timeout=self.timeout, bridge_cmd=self.bridge_cmd
        )

"""Run the design tool on a config file, normalize the result to one envelope.

The caller's contract is bit-exact: one UTF-8 JSON line on stdout of the
shape {"status": "success"|"error", "message": ..., "artifacts": [...]},
exit code 0 for success and nonzero otherwise.  No exception escapes;
every failure becomes an error envelope.  The tool's own stdout is
rerouted to stderr so the envelope stays the only stdout line, and the
full traceback of a failure is written to <workdir>/bridge.log with only
its tail quoted in the envelope message.
"""

from __future__ import annotations

import contextlib
import json
import os
import sys
import traceback
from pathlib import Path

TRACEBACK_TAIL_LINES = 20
LOG_NAME = "bridge.log"


def _run_tool(config_path: Path, workdir: Path) -> None:
    """Invoke the PyTheus run entry point with outputs landing in workdir."""
    from pytheus.main import run_main

    previous = os.getcwd()
    os.chdir(workdir)
    try:
        run_main(str(config_path), False)
    finally:
        os.chdir(previous)


def _snapshot(workdir: Path) -> set[Path]:
    return {p for p in workdir.rglob("*") if p.is_file()}


def run_bridge(config_path: str, workdir: str) -> tuple[int, dict]:
    """Execute one tool run; returns (exit_code, envelope)."""
    workdir_path = Path(workdir)
    config = Path(config_path)

    if not config.is_file():
        return 1, {
            "status": "error",
            "message": f"config file not found: {config}",
            "artifacts": [],
        }
    try:
        workdir_path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        return 1, {
            "status": "error",
            "message": f"cannot create workdir {workdir_path}: {exc}",
            "artifacts": [],
        }

    before = _snapshot(workdir_path)
    log_path = workdir_path / LOG_NAME
    try:
        # the tool may print freely; none of it belongs on our stdout
        with contextlib.redirect_stdout(sys.stderr):
            _run_tool(config.resolve(), workdir_path)
    except BaseException:
        full = traceback.format_exc()
        try:
            with open(log_path, "a", encoding="utf-8") as log:
                log.write(full)
        except OSError:
            pass
        tail = "\n".join(full.strip().splitlines()[-TRACEBACK_TAIL_LINES:])
        return 1, {"status": "error", "message": tail, "artifacts": []}

    produced = sorted(
        str(p.relative_to(workdir_path))
        for p in _snapshot(workdir_path) - before
        if p.name != LOG_NAME
    )
    if not produced:
        return 1, {
            "status": "error",
            "message": "tool finished without producing any result files",
            "artifacts": [],
        }
    return 0, {
        "status": "success",
        "message": f"tool run completed with {len(produced)} result file(s)",
        "artifacts": produced,
    }


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if len(argv) != 2:
        envelope = {
            "status": "error",
            "message": "usage: pytheus-bridge <config-path> <workdir>",
            "artifacts": [],
        }
        print(json.dumps(envelope), flush=True)
        return 2
    code, envelope = run_bridge(argv[0], argv[1])
    print(json.dumps(envelope), flush=True)
    return code


if __name__ == "__main__":
    sys.exit(main())

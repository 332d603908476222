"""Contract tests: the bridge speaks exactly one envelope line, always.

A fake ``pytheus`` package (written into a temp dir and injected via
PYTHONPATH) stands in for the real tool; its behavior is keyed off the
config it receives.  One cross-package test drives the bridge through
the host engine's tool runner, and one smoke test runs the real tool
when it happens to be installed.
"""

import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

BRIDGE_SRC = str(Path(__file__).resolve().parents[1] / "src")

FAKE_TOOL = '''
import json


def run_main(filename, example=False):
    """Stand-in for the tool's run entry point; behavior keyed on config."""
    with open(filename, "r", encoding="utf-8") as f:
        config = json.load(f)
    for key in config:
        if key.startswith("bogus"):
            raise ValueError(f"unknown configuration field {key!r}")
    folder = config.get("foldername", "run")
    if folder == "crash_run":
        raise RuntimeError("optimization failed to converge after 30 edges")
    if config.get("description") == "chatty":
        print("loading optimizer modules...")
        print("iteration 1: loss 0.93")
    with open("best_solution.json", "w", encoding="utf-8") as f:
        json.dump({"folder": folder, "edges": [[0, 1]]}, f)
    with open("summary.txt", "w", encoding="utf-8") as f:
        f.write("converged\\n")
'''

GOOD_CONFIG = {
    "description": "Bell state on end modes",
    "foldername": "bell_run",
    "bulk_thr": 0.01,
    "edges_tried": 30,
    "ftol": 1e-06,
    "loss_func": "cr",
    "num_anc": 2,
    "num_pre": 1,
    "optimizer": "L-BFGS-B",
    "imaginary": False,
    "safe_hist": True,
    "samples": 1,
    "target_quantum": ["10", "01"],
    "in_nodes": [],
    "out_nodes": [0, 1],
    "thresholds": [0.3, 0.1],
    "tries_per_edge": 3,
    "removed_connections": [],
    "number_resolving": True,
}


@pytest.fixture
def fake_tool_path(tmp_path):
    pkg = tmp_path / "faketool" / "pytheus"
    pkg.mkdir(parents=True)
    (pkg / "__init__.py").write_text("")
    (pkg / "main.py").write_text(FAKE_TOOL)
    return str(tmp_path / "faketool")


def write_config(tmp_path, name="config.json", **overrides):
    config = dict(GOOD_CONFIG, **overrides)
    path = tmp_path / name
    path.write_text(json.dumps(config, indent=2))
    return path


def run_bridge_process(config_path, workdir, pythonpath_extra):
    env = dict(os.environ)
    env["PYTHONPATH"] = os.pathsep.join(
        [pythonpath_extra, BRIDGE_SRC, env.get("PYTHONPATH", "")]
    )
    return subprocess.run(
        [sys.executable, "-m", "pytheus_bridge", str(config_path), str(workdir)],
        capture_output=True,
        text=True,
        env=env,
        timeout=60,
    )


def parse_single_envelope(proc):
    """The whole stdout must be exactly one JSON envelope line."""
    lines = proc.stdout.splitlines()
    assert len(lines) == 1, f"stdout must carry exactly the envelope, got: {proc.stdout!r}"
    envelope = json.loads(lines[0])
    assert set(envelope) == {"status", "message", "artifacts"}
    assert envelope["status"] in ("success", "error")
    assert isinstance(envelope["message"], str)
    assert isinstance(envelope["artifacts"], list)
    return envelope


class TestSuccessPath:
    def test_success_envelope_exit_zero_artifacts_exist(self, tmp_path, fake_tool_path):
        config = write_config(tmp_path)
        workdir = tmp_path / "work"
        proc = run_bridge_process(config, workdir, fake_tool_path)
        assert proc.returncode == 0
        envelope = parse_single_envelope(proc)
        assert envelope["status"] == "success"
        assert sorted(envelope["artifacts"]) == ["best_solution.json", "summary.txt"]
        for artifact in envelope["artifacts"]:
            assert (workdir / artifact).is_file()

    def test_chatty_tool_stdout_stays_off_the_wire(self, tmp_path, fake_tool_path):
        config = write_config(tmp_path, description="chatty")
        proc = run_bridge_process(config, tmp_path / "work", fake_tool_path)
        assert proc.returncode == 0
        envelope = parse_single_envelope(proc)  # would fail on extra lines
        assert envelope["status"] == "success"
        assert "loading optimizer modules" in proc.stderr


class TestFailurePaths:
    def test_tool_exception_becomes_error_envelope(self, tmp_path, fake_tool_path):
        config = write_config(tmp_path, foldername="crash_run")
        workdir = tmp_path / "work"
        proc = run_bridge_process(config, workdir, fake_tool_path)
        assert proc.returncode != 0
        envelope = parse_single_envelope(proc)
        assert envelope["status"] == "error"
        assert "optimization failed to converge" in envelope["message"]
        assert envelope["artifacts"] == []
        # full traceback preserved in the workdir log
        log = (workdir / "bridge.log").read_text()
        assert "RuntimeError" in log and "Traceback" in log

    def test_unknown_field_surfaces_tools_own_complaint(self, tmp_path, fake_tool_path):
        config = write_config(tmp_path, bogus_knob=3)
        proc = run_bridge_process(config, tmp_path / "work", fake_tool_path)
        assert proc.returncode != 0
        envelope = parse_single_envelope(proc)
        assert envelope["status"] == "error"
        assert "unknown configuration field 'bogus_knob'" in envelope["message"]

    def test_missing_config_file(self, tmp_path, fake_tool_path):
        proc = run_bridge_process(tmp_path / "nope.json", tmp_path / "work", fake_tool_path)
        assert proc.returncode != 0
        envelope = parse_single_envelope(proc)
        assert envelope["status"] == "error"
        assert "not found" in envelope["message"]

    def test_traceback_tail_is_bounded(self, tmp_path, fake_tool_path):
        config = write_config(tmp_path, foldername="crash_run")
        proc = run_bridge_process(config, tmp_path / "work", fake_tool_path)
        envelope = parse_single_envelope(proc)
        assert len(envelope["message"].splitlines()) <= 20

    def test_usage_error_still_one_envelope_line(self, fake_tool_path):
        env = dict(os.environ)
        env["PYTHONPATH"] = os.pathsep.join([fake_tool_path, BRIDGE_SRC])
        proc = subprocess.run(
            [sys.executable, "-m", "pytheus_bridge", "only-one-arg"],
            capture_output=True, text=True, env=env, timeout=60,
        )
        assert proc.returncode != 0
        envelope = parse_single_envelope(proc)
        assert envelope["status"] == "error"


class TestHostEngineIntegration:
    def test_tool_runner_classifies_bridge_output(self, tmp_path, fake_tool_path, monkeypatch):
        """Drive the bridge through the host engine's subprocess runner."""
        toolrunner = pytest.importorskip("mandel.toolrunner")
        configschema = pytest.importorskip("mandel.configschema")
        monkeypatch.setenv(
            "PYTHONPATH",
            os.pathsep.join([fake_tool_path, BRIDGE_SRC, os.environ.get("PYTHONPATH", "")]),
        )
        cfg = configschema.parse_config(json.dumps(GOOD_CONFIG))
        outcome = toolrunner.run_tool(
            cfg,
            tmp_path / "work",
            backend="real",
            bridge_cmd=[sys.executable, "-m", "pytheus_bridge"],
            timeout=60,
        )
        assert outcome.success, outcome.message
        assert any(a.endswith("best_solution.json") for a in outcome.artifacts)

        bad = cfg.replace(foldername="crash_run")
        outcome = toolrunner.run_tool(
            bad,
            tmp_path / "work2",
            backend="real",
            bridge_cmd=[sys.executable, "-m", "pytheus_bridge"],
            timeout=60,
        )
        assert not outcome.success
        assert "optimization failed to converge" in outcome.message


class TestRealToolSmoke:
    def test_real_tool_success_envelope(self, tmp_path):
        pytest.importorskip("pytheus", reason="design tool not installed")
        config = write_config(tmp_path, samples=1, edges_tried=5, tries_per_edge=1)
        env = dict(os.environ)
        env["PYTHONPATH"] = os.pathsep.join([BRIDGE_SRC, env.get("PYTHONPATH", "")])
        proc = subprocess.run(
            [sys.executable, "-m", "pytheus_bridge", str(config), str(tmp_path / "work")],
            capture_output=True, text=True, env=env, timeout=570,
        )
        envelope = parse_single_envelope(proc)
        assert envelope["status"] == "success"
        assert envelope["artifacts"]

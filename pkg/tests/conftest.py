ACCEPTANCE_MODULE = "test_acceptance"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    lines = []
    for status, label in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if ACCEPTANCE_MODULE in nodeid and "::" in nodeid:
                lines.append((nodeid, f"ACCEPTANCE {label}: {nodeid.split('::')[-1]}"))
    if lines:
        terminalreporter.write_line("")
        terminalreporter.write_line("-- acceptance criteria --")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)

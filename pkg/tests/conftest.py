import re

CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter):
    outcomes = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            match = CRITERION.search(getattr(report, "nodeid", ""))
            if not match or getattr(report, "when", "call") not in ("call", "setup"):
                continue
            key = (int(match.group(1)), match.group(2).replace("_", " "))
            if status != "passed" or key not in outcomes:
                outcomes[key] = "PASS" if status == "passed" else "FAIL"
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for (number, name), outcome in sorted(outcomes.items()):
        terminalreporter.write_line(f"criterion {number} [{name}]: {outcome}")

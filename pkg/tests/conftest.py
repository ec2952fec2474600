import os
import re
import sys

sys.path.insert(0, os.path.dirname(__file__))

CRITERIA = {
    1: "worked-example exactness",
    2: "inclusion-exclusion identity",
    3: "expectation fixed point",
    4: "binary equivalence",
    5: "eight-receiver study",
    6: "variance bound consistency",
    7: "efficiency ordering",
    8: "model selection",
    9: "determinism",
}

_outcomes: dict[int, list[tuple[str, str]]] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_c(\d+)_", report.nodeid)
    if not m:
        return
    if report.when == "call" or report.outcome != "passed":
        _outcomes.setdefault(int(m.group(1)), []).append((report.nodeid.split("::")[-1], report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, label in CRITERIA.items():
        runs = _outcomes.get(n)
        if not runs:
            terminalreporter.write_line(f"criterion {n} ({label}): NOT RUN")
            continue
        failed = [name for name, outcome in runs if outcome != "passed"]
        status = "FAIL" if failed else "PASS"
        detail = f" [failed: {', '.join(failed)}]" if failed else ""
        terminalreporter.write_line(f"criterion {n} ({label}): {status}{detail}")

import json
from pathlib import Path

import pytest

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def reference_golden():
    return json.loads((GOLDEN / "reference_point.json").read_text())


@pytest.fixture(scope="session")
def example_sweeps():
    """Exact-source sweeps for the worked examples (1 and 2 share a table)."""
    from blockmaxent.experiments import example_spec, run_sweep

    return {1: run_sweep(example_spec(1)), 3: run_sweep(example_spec(3))}


_criteria: dict[int, list[tuple[str, str]]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        name = report.nodeid.split("::")[-1]
        n = int(name.split("_")[2])
        _criteria.setdefault(n, []).append((name, report.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        results = _criteria[n]
        failed = [name for name, outcome in results if outcome != "passed"]
        verdict = "PASS" if not failed else f"FAIL ({len(failed)}/{len(results)} checks failed: {', '.join(failed)})"
        terminalreporter.write_line(f"criterion {n}: {verdict}")

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from firstint import corpus  # noqa: E402


@pytest.fixture(scope="session")
def corpus_defs():
    return {name: corpus.load(name) for name in corpus.system_names()}


@pytest.fixture(scope="session")
def corpus_integrals(corpus_defs):
    return {name: corpus.integrals(name, d) for name, d in corpus_defs.items()}


def pytest_terminal_summary(terminalreporter):
    rows = []
    for status in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(status, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" in nodeid and rep.when == "call":
                rows.append((nodeid, "PASS" if status == "passed" else "FAIL",
                             dict(rep.user_properties).get("summary", "")))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, verdict, summary in sorted(rows):
        name = nodeid.split("::")[-1]
        terminalreporter.write_line(f"{verdict} {name}: {summary}")

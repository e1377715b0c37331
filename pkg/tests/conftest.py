from pathlib import Path

import pytest

from sensaudit.corpus import Note, build_corpus

FIXTURES = Path(__file__).parent / "fixtures"

# filled by test_acceptance.py, printed at the end of the run
ACCEPTANCE_RESULTS: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def tiny_corpus():
    return build_corpus([
        Note("a", ("hi", "there"), 1),
        Note("b", ("hi", "hi"), 0),
        Note("c", ("his", "mom", "visited"), 0),
        Note("d", ("the", "patient", "has", "stroke"), 1),
        Note("e", (), 0),
    ])


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE_RESULTS, key=lambda k: int(k.split("-")[1])):
        ok, detail = ACCEPTANCE_RESULTS[name]
        terminalreporter.write_line(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")

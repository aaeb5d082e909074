import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    """record(criterion, passed, detail) for the end-of-run acceptance summary."""

    def record(criterion: int, passed: bool, detail: str):
        _ACCEPTANCE[criterion] = (bool(passed), detail)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[crit]
        terminalreporter.write_line(f"criterion {crit:>2}: {'PASS' if ok else 'FAIL'}  {detail}")

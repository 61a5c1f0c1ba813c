"""Shared fixtures: the acceptance-criterion reporter.

Each acceptance test records exactly one verdict line.  The lines are
replayed in a terminal section after the run so they stay visible under
output capture, including for passing tests.
"""

from typing import Dict

import pytest

_criterion_lines: Dict[int, str] = {}
_acceptance_ran = False


@pytest.fixture(scope="session")
def criterion_report():
    """Record one pass/fail line for an acceptance criterion, then assert it."""
    global _acceptance_ran
    _acceptance_ran = True

    def record(num: int, ok: bool, detail: str) -> None:
        line = f"[criterion {num:2d}] {'PASS' if ok else 'FAIL'}: {detail}"
        _criterion_lines[num] = line
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_ran:
        return
    terminalreporter.section("acceptance criteria")
    for num in range(1, 12):
        line = _criterion_lines.get(
            num, f"[criterion {num:2d}] FAIL: test errored before reporting"
        )
        terminalreporter.write_line(line)

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from approute.builtins import builtin  # noqa: E402


@pytest.fixture
def seven():
    return builtin("seven-link")


@pytest.fixture
def congested():
    return builtin("two-link-congested")


def pytest_terminal_summary(terminalreporter):
    from acceptance_registry import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(RESULTS, key=lambda k: int(k.split()[0])):
        ok, detail = RESULTS[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")

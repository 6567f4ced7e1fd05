import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from posaudit import build_strata, load_table1, restrict  # noqa: E402

ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def table1():
    return load_table1()


@pytest.fixture(scope="session")
def strata1(table1):
    return build_strata(table1)


@pytest.fixture(scope="session")
def restricted(table1):
    return restrict(table1, lambda z: z != (0, 0), "not (V=0 and W=0)")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        line = f"{'PASS' if ok else 'FAIL'}  {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)

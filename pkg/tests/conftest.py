import os
from pathlib import Path

import pytest

from lamassu import experiments

CACHE = Path(os.environ.get("LAMASSU_EXPERIMENT_CACHE", Path(__file__).resolve().parents[1] / ".experiment-cache"))

_ACCEPTANCE: list[tuple[str, bool, str]] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


@pytest.fixture(scope="session")
def grid():
    """(arm, seed) -> RunResult from the experiment cache, training on a miss."""
    runs = {}

    def get(arm, seed=0):
        if (arm, seed) not in runs:
            runs[(arm, seed)] = experiments.run(experiments.arm_overrides(arm, seed), CACHE)
        return runs[(arm, seed)]

    return get


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in sorted(_ACCEPTANCE, key=lambda r: _order(r[0])):
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")


def _order(name: str):
    head = name.split()[0]
    num = "".join(ch for ch in head if ch.isdigit())
    return (int(num) if num else 99, head)

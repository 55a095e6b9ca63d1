import pathlib

import pytest

from qosmc import parse_system
from qosmc.smt import SolverSession, default_solver_command

ROOT = pathlib.Path(__file__).resolve().parent.parent
MODELS = ROOT / "models"


@pytest.fixture(scope="session")
def models_dir() -> pathlib.Path:
    return MODELS


@pytest.fixture(scope="session")
def intro_system():
    return parse_system((MODELS / "intro.cfsm").read_text())


@pytest.fixture(scope="session")
def pop_system():
    return parse_system((MODELS / "pop.cfsm").read_text())


class MemoSession(SolverSession):
    """check_sat is a pure function of the script (queries are isolated),
    so repeated scripts can reuse the previous answer."""

    def __init__(self, command, timeout_ms=120_000):
        super().__init__(command, timeout_ms=timeout_ms)
        self._memo: dict[str, bool] = {}

    def check_sat(self, script: str) -> bool:
        if script not in self._memo:
            self._memo[script] = super().check_sat(script)
        return self._memo[script]


@pytest.fixture(scope="session")
def solver():
    with SolverSession(default_solver_command(60_000), timeout_ms=60_000) as s:
        yield s


@pytest.fixture(scope="session")
def memo_solver():
    with MemoSession(default_solver_command(60_000), timeout_ms=60_000) as s:
        yield s

import numpy as np
import pytest

from hsikrylov import aperture as ap
from hsikrylov.optics import OpticalParams


@pytest.fixture(scope="session")
def code32():
    code, _ = ap.search_code_heuristic(32, 91, 0.5, restarts=8, flips=64, seed=0)
    return code


@pytest.fixture
def params():
    return OpticalParams()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """``report(name, ok, detail)`` records one acceptance line, then asserts ``ok``."""

    def _report(name: str, ok: bool, detail: str) -> None:
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
        assert ok, detail

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

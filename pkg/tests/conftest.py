import numpy as np
import pytest

from probekit.born import LinearizedProblem
from probekit.wavesim import Acquisition, Medium


@pytest.fixture(scope="session")
def problem24():
    medium = Medium.constant(24)
    return LinearizedProblem(medium, Acquisition.surface(medium), cache_dir=None)


@pytest.fixture(scope="session")
def problem32():
    medium = Medium.constant(32)
    return LinearizedProblem(medium, Acquisition.surface(medium), cache_dir=None)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> None:
    """Store an acceptance outcome; the summary prints one line per criterion."""
    ACCEPTANCE[criterion] = (bool(ok), detail)
    print(f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")

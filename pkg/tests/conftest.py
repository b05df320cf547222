import numpy as np
import pytest

from trafficlearn.game import TrafficGame

_ACCEPTANCE: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def stable_game():
    return TrafficGame(costs=[[1.0, 3.0], [1.0, 3.0]], betas=[0.5, 0.5])


@pytest.fixture
def unstable_game():
    return TrafficGame(costs=[[1.0, 3.0], [1.0, 3.0]], betas=[1.5, 1.5])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def record():
    """Store a one-line acceptance verdict; printed in the terminal summary."""
    def _record(name: str, ok: bool, detail: str = ""):
        _ACCEPTANCE[name] = (bool(ok), detail)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[0])):
        ok, detail = _ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {name}  {detail}")

import sys
from pathlib import Path

import pytest
from hypothesis import settings

from mavland import bundled_scenario
from mavland.config import load_scenario

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None)
settings.load_profile("default")

ECHO_CMD = f"exec:{sys.executable} -m mavland.echo_detector --config {{config}} --seed {{seed}}"

_criteria: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line, echoed again in the terminal summary."""

    def _report(number: int, title: str, ok: bool, detail: str = "") -> None:
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else "")
        _criteria.append(line)
        print(line)

    return _report


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_criteria):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def nominal():
    return load_scenario(bundled_scenario("nominal"))


@pytest.fixture(scope="session")
def noiseless():
    return load_scenario(bundled_scenario("noiseless"))

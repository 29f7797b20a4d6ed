import numpy as np
import pytest

from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line; all lines are printed in the terminal summary."""

    def report(n, ok, detail):
        _ACCEPTANCE_LINES.append((n, f"[criterion {n:2d}] {'PASS' if ok else 'FAIL'}: {detail}"))

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

import sys

import numpy as np
import pytest

from sbm_pointsource.function_space import AtomicMeasure, mollified_indicator


@pytest.fixture
def bump():
    """Smoothed indicator of the shell 1 <= r <= 2."""
    return mollified_indicator(1.0, 2.0, 0.1)


@pytest.fixture
def unit_dirac():
    return AtomicMeasure.dirac([1.0, 0.0, 0.0])


def point(r, direction=(1.0, 0.0, 0.0)):
    d = np.asarray(direction, dtype=float)
    return r * d / np.linalg.norm(d)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])

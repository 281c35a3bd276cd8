import re

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def loop_gram(fn, A, B):
    """Kernel matrix by explicit loops; independent of the vectorized path."""
    return np.array([[fn(a, b) for b in B] for a in A])


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list = []


def _criterion_order(line):
    label = re.match(r"criterion (\d+)(\w*)", line)
    return int(label.group(1)), label.group(2)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=_criterion_order):
            terminalreporter.write_line(line)

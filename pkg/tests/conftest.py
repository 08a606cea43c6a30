import numpy as np
import pytest

from duodec.core import Distribution
from duodec.models import ModelSpec


def table_model(vocab, rows, order=None, temperature=1.0):
    """ModelSpec from {context tuple: probs}; ``()`` is the default row."""
    if order is None:
        order = max((len(c) for c in rows), default=0)
    return ModelSpec(vocab, order, {c: Distribution(p) for c, p in rows.items()}, temperature)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

import itertools

import numpy as np
import pytest


def contiguous_partitions(n, max_blocks=None):
    """All contiguous partitions of range(n) as lists of (start, end)."""
    max_blocks = n if max_blocks is None else max_blocks
    for k in range(1, min(n, max_blocks) + 1):
        for cuts in itertools.combinations(range(1, n), k - 1):
            edges = (0,) + cuts + (n,)
            yield [(edges[i], edges[i + 1] - 1) for i in range(k)]


def mixed_norm_direct(x, blocks):
    return sum(np.sqrt(e - s + 1) * np.linalg.norm(x[s:e + 1]) for s, e in blocks)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def record_acceptance(name, ok, detail=""):
    """Store one pass/fail line for the terminal summary and return ``ok``."""
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip())
    print(ACCEPTANCE_LINES[-1])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

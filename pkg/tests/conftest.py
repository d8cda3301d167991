import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from matdyadic.harness import make_instance  # noqa: E402


@pytest.fixture
def instance():
    """Factory for seeded sweep instances: ``instance(seed, d, depth, branching, r, kind)``."""
    def make(seed=0, d=2, depth=3, branching=2, r=1, kind="haar"):
        return make_instance(seed, d, depth, branching, r, kind)
    return make


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Collects the one-line verdicts printed again in the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE_LINES, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)

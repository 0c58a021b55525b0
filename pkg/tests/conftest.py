import numpy as np
import pytest

from ballann import build_registry, generate_instance, normalize

# One line per acceptance criterion, printed after the run so the verdicts
# survive pytest's stdout capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_registry(seed: int, dim: int, n: int, eps: float = 0.25, profile: str = "uniform"):
    balls = generate_instance(seed, dim, n, profile)
    return build_registry(normalize(balls, eps))


@pytest.fixture
def rng():
    return np.random.default_rng(20260815)

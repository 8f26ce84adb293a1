import numpy as np
import pytest

from softer.model import Dataset, SamplerSettings, default_config

# pass/fail lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def make_problem(rng, dims=(3, 4), n=15, p=2, D=3, **kwargs):
    """Small random dataset and a matching default configuration."""
    config = default_config(dims, D=D, sampler=SamplerSettings(iterations=10, burn_in=0, chains=1), **kwargs)
    X = rng.standard_normal((n, *dims))
    if config.symmetry != "none":
        X = X + np.swapaxes(X, 1, 2)
        R = dims[0]
        X[:, np.arange(R), np.arange(R)] = 0.0
    C = rng.standard_normal((n, p))
    y = rng.standard_normal(n)
    return config, Dataset(y, X, C)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

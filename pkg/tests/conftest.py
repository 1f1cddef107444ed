import numpy as np
import pytest

from scalarquant.density import Density

ACCEPTANCE_LINES: list[str] = []


def random_density(rng: np.random.Generator) -> Density:
    """A density drawn from one of the built-in families with random parameters."""
    family = rng.integers(5)
    if family == 0:
        return Density.uniform()
    if family == 1:
        return Density.beta(*rng.uniform(1.0, 6.0, size=2))
    if family == 2:
        return Density.truncated_normal(rng.uniform(0.0, 1.0), rng.uniform(0.08, 1.0))
    if family == 3:
        return Density.truncated_exponential(rng.uniform(0.1, 8.0))
    n = int(rng.integers(3, 7))
    xs = np.concatenate([[0.0], np.sort(rng.uniform(0.05, 0.95, n - 2)), [1.0]])
    return Density.piecewise_linear(list(zip(xs, rng.uniform(0.1, 3.0, n))))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def named_densities():
    return {name: Density.parse(name) for name in
            ("uniform", "beta:2,2", "beta:2,4", "beta:4,2", "truncnorm:0.5,0.3", "truncexp:3")}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)

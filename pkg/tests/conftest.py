import numpy as np
import pytest

from dtph import PHSystem, registry


def random_linear_system(rng, n, m, r_rank=None, scale=1.0):
    """Random system with skew J, PSD R of the given rank and SPD Q."""
    A = rng.normal(size=(n, n))
    J = scale * (A - A.T) / 2
    k = n if r_rank is None else r_rank
    C = rng.normal(size=(n, k))
    R = scale * C @ C.T / max(k, 1)
    P = rng.normal(size=(n, n))
    Q = P @ P.T / n + 0.5 * np.eye(n)
    B = rng.normal(size=(n, m))
    return PHSystem(J, R, Q, B, name=f"random{n}x{m}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def damper():
    return registry.scalar_damper()


@pytest.fixture
def rotation():
    return registry.rotation()


@pytest.fixture
def ex1():
    return registry.example1_standin()


@pytest.fixture
def ex2():
    return registry.example2()


# One line per acceptance criterion, printed in the terminal summary.
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":").rstrip("ab"))):
        terminalreporter.write_line(line)

import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from relaxhum.discretize import build_grid
from relaxhum.model import baseline_problem, make_problem

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_problem(rng, n=None, n_steps=None, epsilon=1e-2, omega_full=False, mu=None):
    """Small 1-D instance with variable conductivities and random initial data."""
    n = n or int(rng.integers(8, 17))
    n_steps = n_steps or int(rng.integers(10, 21))
    grid = build_grid(1, [1.0], [n])
    ce, ci = rng.uniform(0.5, 2.0, 2)
    mu = mu if mu is not None else float(rng.uniform(0.5, 2.0))
    omega = np.ones(n, dtype=bool) if omega_full else ((0.2,), (0.6,))
    return make_problem(grid, c_m=float(rng.uniform(0.5, 2.0)), mu=mu, epsilon=epsilon,
                        M_e=lambda x: ce * (1 + 0.5 * x), M_i=lambda x: ci * (1.5 - 0.5 * x),
                        omega=omega, T=float(rng.uniform(0.5, 1.5)), n_steps=n_steps,
                        v0=rng.standard_normal(n), ue0=rng.standard_normal(n))


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture(scope="session")
def baseline():
    return baseline_problem(epsilon=1e-2)

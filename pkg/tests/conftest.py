from pathlib import Path

import numpy as np
import pytest

from cbilab.model import AtomMeasure, ModelSpec, load_model, validate
from cbilab.spectral import is_irreducible, perron

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def fixture_path():
    return lambda name: FIXTURES / f"{name}.json"


@pytest.fixture(scope="session")
def reference():
    return load_model(FIXTURES / "reference.json")


def random_ess_nonneg(rng, d, p_edge=0.45):
    """Random essentially non-negative matrix; off-diagonals in [0.2, 2] or 0."""
    A = np.where(rng.random((d, d)) < p_edge, rng.uniform(0.2, 2.0, (d, d)), 0.0)
    np.fill_diagonal(A, rng.uniform(-1.0, 0.5, d))
    return A


def random_irreducible(rng, d):
    while True:
        A = random_ess_nonneg(rng, d, p_edge=0.6)
        if is_irreducible(A):
            return A


def random_measure(rng, d, k_max=3, scale=1.5):
    k = rng.integers(0, k_max + 1)
    pts = rng.uniform(0, scale, (k, d)) * (rng.random((k, d)) < 0.7)
    pts[pts.sum(axis=1) == 0, 0] = 0.5
    return AtomMeasure(pts, rng.uniform(0.1, 1.0, k)) if k else AtomMeasure.zero(d)


def random_critical_model(rng, d):
    """Random irreducible model shifted along the diagonal so that s(Btilde) = 0."""
    from cbilab.coefficients import effective_branching

    B = random_irreducible(rng, d)
    mu = tuple(random_measure(rng, d) for _ in range(d))
    spec = ModelSpec(d=d, c=rng.uniform(0, 1, d), beta=rng.uniform(0, 1, d), B=B,
                     nu=random_measure(rng, d), mu=mu)
    s = perron(effective_branching(spec)).s
    return validate(ModelSpec(d=d, c=spec.c, beta=spec.beta, B=B - s * np.eye(d),
                              nu=spec.nu, mu=mu))

import numpy as np
import pytest
import scipy.sparse as sp

from mfequil.linops import ExplicitMatrix

ACCEPTANCE_LINES = []


def record_acceptance(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def random_dense(rng, m, n, spread=1.0):
    """Dense Gaussian matrix with lognormal row/column scales."""
    A = rng.standard_normal((m, n))
    return np.exp(spread * rng.standard_normal(m))[:, None] * A * np.exp(spread * rng.standard_normal(n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_sparse(rng):
    A = sp.random(30, 20, density=0.3, random_state=7, format="csr")
    A.data = rng.standard_normal(A.nnz)
    return ExplicitMatrix(A)

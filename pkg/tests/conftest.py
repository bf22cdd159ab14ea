import numpy as np
import pytest
import scipy.sparse as sp

from parafac2_admm.tensor import IrregularTensor, SparseSlice


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_tensor(rng, K=3, J=6, rows=(2, 7), density=0.4, days=False):
    slices = []
    for _ in range(K):
        n = int(rng.integers(rows[0], rows[1] + 1))
        X = sp.random(n, J, density=density, random_state=rng, format="coo")
        visit = np.cumsum(rng.integers(1, 10, size=n)) if days else None
        slices.append(SparseSlice(n, X.row, X.col, X.data, visit_days=visit))
    return IrregularTensor(J, slices)


def random_orthonormal(rng, m, r):
    return np.linalg.qr(rng.standard_normal((m, r)))[0]


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def report(criterion, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

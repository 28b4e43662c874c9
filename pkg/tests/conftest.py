import itertools

import numpy as np
import pytest


def brute_force_qr(X, y, u, w=None):
    """Minimum weighted check loss over all exact-fit basic solutions."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    best, arg = np.inf, None
    for rows in itertools.combinations(range(n), p):
        A = X[list(rows)]
        if abs(np.linalg.det(A)) < 1e-12:
            continue
        b = np.linalg.solve(A, y[list(rows)])
        r = y - X @ b
        obj = float(np.sum(w * r * (u - (r < 0))))
        if obj < best:
            best, arg = obj, b
    return best, arg


def check_objective(X, y, u, beta, w=None):
    r = y - X @ beta
    w = np.ones(y.size) if w is None else w
    return float(np.sum(w * r * (u - (r < 0))))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

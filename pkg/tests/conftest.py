import math

import numpy as np
import pytest
from scipy.special import digamma as sp_digamma

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record_criterion():
    """Collect one pass/fail line per acceptance criterion for the run summary."""

    def record(number: int, passed: bool, detail: str) -> None:
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def brute_force_ksg(x, y, k=3) -> float:
    """KSG-1 written directly from its definition with Python loops (test oracle)."""
    x = np.asarray(x, dtype=float).reshape(len(x), -1)
    y = np.asarray(y, dtype=float).reshape(len(y), -1)
    n = len(x)
    total = 0.0
    for i in range(n):
        dx = [max(abs(a - b) for a, b in zip(x[i], x[j])) for j in range(n)]
        dy = [max(abs(a - b) for a, b in zip(y[i], y[j])) for j in range(n)]
        joint = sorted(max(dx[j], dy[j]) for j in range(n) if j != i)
        eps = joint[k - 1]
        nx = sum(1 for j in range(n) if j != i and dx[j] < eps)
        ny = sum(1 for j in range(n) if j != i and dy[j] < eps)
        total += sp_digamma(nx + 1) + sp_digamma(ny + 1)
    return float(sp_digamma(k) + sp_digamma(n) - total / n)


def gaussian_mi(rho: float) -> float:
    return -0.5 * math.log(1.0 - rho ** 2)

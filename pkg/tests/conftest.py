import itertools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def support_by_vertices(Atilde, delta, x):
    """max <x, z> over {z : -delta e <= Atilde z <= delta e} by enumerating the box vertices."""
    n = len(x)
    best = -np.inf
    for signs in itertools.product((-1.0, 1.0), repeat=n):
        z = np.linalg.solve(Atilde, delta * np.array(signs))
        best = max(best, float(np.dot(x, z)))
    return best


def random_nonsingular(rng, n, cond_max=1e3):
    while True:
        M = rng.uniform(-1.0, 1.0, (n, n))
        if np.linalg.cond(M) < cond_max:
            return M


def random_psd(rng, n, scale=1.0):
    R = rng.normal(size=(n, n))
    return scale * R @ R.T / n


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_acceptance_lines = []


@pytest.fixture
def report_criterion():
    """Record one PASS/FAIL line per acceptance criterion; all lines are repeated in the summary."""

    def record(number, passed, detail, soft=False):
        verdict = "PASS" if passed else ("SOFT MISS" if soft else "FAIL")
        line = f"criterion {number}: {verdict}  {detail}"
        _acceptance_lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_acceptance_lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)

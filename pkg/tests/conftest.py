import numpy as np
import pytest

from indihinf.linsys import StateSpace
from indihinf.vehicle import load_params


def random_stable(rng, n, m=1, p=1, margin=0.05):
    """Random stable system: eigenvalues shifted into the open left half plane."""
    A = rng.standard_normal((n, n))
    shift = max(np.linalg.eigvals(A).real.max(), 0.0) + margin + rng.uniform(0, 1)
    A = A - shift * np.eye(n)
    return StateSpace(A, rng.standard_normal((n, m)), rng.standard_normal((p, n)),
                      rng.standard_normal((p, m)) * rng.uniform(0, 1))


@pytest.fixture(scope="session")
def bebop():
    return load_params("bebop-sim")


@pytest.fixture(scope="session")
def enac():
    return load_params("enac-exp")


_REPORTS = {}


def comparison(name, kinds=("pd", "hinf-structured", "hinf-full")):
    """Cached ``compare_controllers`` run of a shipped scenario."""
    from indihinf.sim import compare_controllers, load_scenario
    key = (name, tuple(kinds))
    if key not in _REPORTS:
        _REPORTS[key] = compare_controllers(load_scenario(name), list(kinds))
    return _REPORTS[key]


def metric_of(report, kind):
    return report.metrics[report.names.index(kind)]


def trace_of(report, kind):
    return report.traces[report.names.index(kind)]


ACCEPTANCE = {}


def record(num, ok, detail=""):
    """Store and print the one-line outcome of an acceptance criterion."""
    line = f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[num] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for num in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[num])

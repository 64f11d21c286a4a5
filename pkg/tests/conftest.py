import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qflow.hamiltonian import build_matrix
from qflow.models import random_store

settings.register_profile(
    "qflow",
    deadline=None,
    max_examples=25,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("qflow")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_model():
    """4 spatial orbitals, 4 electrons: the 8-spin-orbital desk model."""
    store = random_store(4, 4, seed=3)
    return store, build_matrix(store, store.orbitals().sector())


@pytest.fixture(scope="session")
def medium_model():
    """6 spatial orbitals, 4 electrons (225 determinants)."""
    store = random_store(6, 4, seed=0)
    return store, build_matrix(store, store.orbitals().sector())


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance_report(capsys):
    """Record one pass/fail line per acceptance criterion; echoed in the terminal summary."""

    def emit(number: int, name: str, passed: bool, detail: str):
        line = f"criterion {number:>2} {name:<18} {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import pytest

from kktunlearn import suites


@pytest.fixture(scope="session")
def pinn_run():
    """Desk-scale PINN experiment on seed 0, shared by the PINN and acceptance tests."""
    return suites.pinn_experiment(0)


@pytest.fixture(scope="session")
def svm_run():
    return suites.svm_suite(0)

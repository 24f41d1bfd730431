import numpy as np
import pytest

from bnpmed.config import ChainConfig
from bnpmed.dgp import ScenarioSpec, simulate
from bnpmed.stochastic import make_rng

_ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        ok, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture
def record_criterion():
    """Store a criterion outcome for the end-of-session table and print it now."""

    def rec(k, ok, detail):
        _ACCEPTANCE[k] = (bool(ok), detail)
        print(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
        return ok

    return rec


@pytest.fixture(scope="session")
def small_spec():
    return ScenarioSpec(scenario=1, n_clusters=12, size_range=(3, 7))


@pytest.fixture(scope="session")
def small_data(small_spec):
    ds, _, _ = simulate(small_spec, make_rng(5, "fixture"))
    return ds


@pytest.fixture(scope="session")
def binary_data(small_spec):
    ds, _, _ = simulate(small_spec.with_(mediator1_binary=True), make_rng(6, "fixture"))
    return ds


@pytest.fixture(scope="session")
def tiny_chain():
    return ChainConfig(k_c=3, k_i=2, n_burn=10, n_keep=15, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)

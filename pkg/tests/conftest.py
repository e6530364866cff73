import numpy as np
import pytest

from trace_risk.data import (Feature, FeatureSchema, default_synthetic_schema, generate_synthetic,
                             simulate_missing)


def toy_schema() -> FeatureSchema:
    """Three features, one of each kind."""
    return FeatureSchema((
        Feature("x", "continuous"),
        Feature("c", "checkbox", 3, members=("c.1", "c.2", "c.3")),
        Feature("k", "categorical", 3, categories=("a", "b", "c")),
    ), "y")


@pytest.fixture
def schema3():
    return toy_schema()


@pytest.fixture
def toy_data():
    s = toy_schema()
    ds, _ = generate_synthetic(s, 40, 0.5, 1)
    return simulate_missing(ds, 0.2, 3)


@pytest.fixture(scope="session")
def synth_schema():
    return default_synthetic_schema()


@pytest.fixture(scope="session")
def synth_small():
    ds, truth = generate_synthetic(default_synthetic_schema(), 300, 0.2, 11)
    return ds


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance reporting ---------------------------------------------------------
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {text}")

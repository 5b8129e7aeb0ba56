import sys
from datetime import datetime
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from chargeplan.intent import ClassifierConfig, KnowledgeBase  # noqa: E402
from chargeplan.llm import BackendConfig  # noqa: E402
from chargeplan.model import (EnvironmentSnapshot, OpClass, PowerBounds, TimeGrid,  # noqa: E402
                              load_environment)
from chargeplan.parser import DefaultsBook  # noqa: E402

DATA = Path(__file__).resolve().parents[1] / "src" / "chargeplan" / "data"
ALL = tuple(OpClass)


@pytest.fixture(scope="session")
def kb():
    return KnowledgeBase.load()


@pytest.fixture(scope="session")
def defaults():
    return DefaultsBook.load()


@pytest.fixture(scope="session")
def normalized_env():
    return load_environment(DATA / "fixtures" / "normalized.json")


@pytest.fixture(scope="session")
def physical_env():
    return load_environment(DATA / "fixtures" / "physical.json")


@pytest.fixture
def mock_cfg():
    return ClassifierConfig(ALL, backend=BackendConfig())


def small_env(prices, load=None, x_max=1.0, soc_init=0.0, capacity=1.0, efficiency=1.0,
              delta_t=1.0, ref=None):
    """Tiny hand-built snapshot for worked cases."""
    prices = np.asarray(prices, dtype=float)
    start = datetime(2024, 6, 1, 0, 0)
    return EnvironmentSnapshot(
        grid=TimeGrid(start, delta_t, prices.size), prices=prices,
        non_flexible_load=np.zeros_like(prices) if load is None else load,
        bounds=PowerBounds(0.0, x_max), battery_capacity_kwh=capacity, soc_init=soc_init,
        soc_min=0.0, soc_max=1.0, efficiency=efficiency, reference_clock=ref or start)


def pytest_terminal_summary(terminalreporter):
    import suites
    if suites.ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in suites.ACCEPTANCE:
            terminalreporter.write_line(line)

import numpy as np
import pytest

from bqnes.archspace import SpaceConfig
from bqnes.benchmark import SyntheticGenConfig, generate_synthetic


@pytest.fixture(scope="session")
def tiny_space():
    return SpaceConfig.ordinal(dims=3, levels=4)


@pytest.fixture(scope="session")
def tiny_table(tiny_space):
    return generate_synthetic(SyntheticGenConfig(tiny_space, n_val=10, n_test=12, n_classes=4, seed=0))


@pytest.fixture(scope="session")
def small_cell_space():
    return SpaceConfig.cell(("none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(number, title, ok, detail, seconds, limit)``."""

    def record(number, title, ok, detail, seconds, limit=None):
        within = limit is None or seconds < limit
        budget = f" (limit {limit:g}s)" if limit is not None else ""
        line = (f"[{'PASS' if ok and within else 'FAIL'}] criterion {number:2d} {title}: {detail}; "
                f"{seconds:.2f}s{budget}")
        _CRITERIA.append(line)
        print(line)
        return ok and within

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)

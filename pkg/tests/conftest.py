import numpy as np
import pytest
from hypothesis import settings

from atomic_timing.clock import ClockNoiseParams
from atomic_timing.config import ScenarioConfig, bundled_config

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

# filled by tests/test_acceptance.py, printed once at the end of the session
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def table1() -> ScenarioConfig:
    return bundled_config()


@pytest.fixture
def pair_cfg() -> ScenarioConfig:
    """Two noisy clocks on one link, short horizon."""
    return ScenarioConfig(
        clocks=(ClockNoiseParams(3.31e-20, 3.12e-26), ClockNoiseParams(8.87e-21, 2.95e-27)),
        edges=((1, 2),),
        horizon=2000,
    )


def random_connected_edges(n: int, rng: np.random.Generator, extra: int) -> list[tuple[int, int]]:
    """Random spanning tree plus ``extra`` random chords."""
    order = rng.permutation(n) + 1
    edges = set()
    for k in range(1, n):
        a, b = int(order[k]), int(order[rng.integers(k)])
        edges.add((min(a, b), max(a, b)))
    for _ in range(extra):
        a, b = rng.choice(n, 2, replace=False) + 1
        edges.add((int(min(a, b)), int(max(a, b))))
    return sorted(edges)

import numpy as np
import pytest
from hypothesis import settings

from darse.grid import Bus, GridModel, Line
from darse.measurement import partition_areas, select_measurements

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def random_grid(rng, N=4, extra=2, shunts=True, convention="negated"):
    """Connected random grid: a random spanning tree plus ``extra`` chords."""
    order = rng.permutation(N)
    pairs = set()
    for k in range(1, N):
        a, b = int(order[k]), int(order[rng.integers(0, k)])
        pairs.add((min(a, b), max(a, b)))
    tries = 0
    while len(pairs) < min(N - 1 + extra, N * (N - 1) // 2) and tries < 100:
        a, b = sorted(rng.choice(N, 2, replace=False).tolist())
        pairs.add((a, b))
        tries += 1
    lines = []
    for a, b in sorted(pairs):
        y = complex(rng.uniform(0.5, 5), -rng.uniform(1, 20))
        ys = complex(0, rng.uniform(0, 0.1)) if shunts else 0j
        lines.append(Line(a, b, y, ys))
    return GridModel([Bus(i + 1) for i in range(N)], lines, convention)


def random_state(rng, N, spread=0.1):
    mag = 1 + spread * rng.uniform(-1, 1, N)
    ang = spread * rng.uniform(-1, 1, N)
    V = mag * np.exp(1j * ang)
    return np.concatenate([V.real, V.imag])


def two_bus(y=1 - 2j, ys=0j, convention="negated"):
    return GridModel([Bus(1), Bus(2)], [Line(0, 1, y, ys)], convention)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_setup(rng):
    grid = random_grid(rng, 4, 2)
    part = partition_areas(grid.N, 2, seed=1)
    masks = select_measurements(grid, part, 1.0, seed=1)
    return grid, masks


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(mod.RESULTS):
            terminalreporter.write_line(mod.RESULTS[n])

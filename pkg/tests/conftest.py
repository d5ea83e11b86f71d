import functools

import numpy as np
import pytest

from bhflow.engine import Engine, EngineConfig
from bhflow.icgen import PlummerConfig, plummer_arrays

ACCEPTANCE_LINES: list[str] = []


@functools.lru_cache(maxsize=None)
def _plummer(n, seed):
    return plummer_arrays(PlummerConfig(n=n, seed=seed))


def plummer_sample(n, seed=1):
    """Cached Plummer sample; returns fresh copies."""
    return tuple(a.copy() for a in _plummer(n, seed))


@pytest.fixture
def engine_factory():
    engines = []

    def make(workers=1, **kw):
        e = Engine(EngineConfig(workers=workers, **kw))
        engines.append(e)
        return e

    yield make
    for e in engines:
        e.shutdown()


@pytest.fixture
def engine(engine_factory):
    return engine_factory(2)


def random_cloud(n, seed):
    return np.random.default_rng(seed).normal(size=(n, 3)), np.random.default_rng(seed + 1).uniform(0.5, 2.0, n)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

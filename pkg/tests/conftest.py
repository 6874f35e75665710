"""Shared, session-scoped solver caches.

Centralized solves and distributed runs on the bundled fixtures are
deterministic, so they are computed once per session and reused across test
modules. Each cache records the wall-clock time of the first (only) solve so
runtime budgets can be asserted wherever the result is consumed.
"""

import time

import pytest

from fademac.allocation import AllocationProblem, solve_centralized
from fademac.distributed import run as run_distributed
from fademac.fixtures import load_fixture


@pytest.fixture(scope="session")
def centralized():
    """centralized(name) -> (AllocationProblem, CentralizedReport, seconds)."""
    cache = {}

    def get(name):
        if name not in cache:
            prob = AllocationProblem(load_fixture(name))
            start = time.perf_counter()
            report = solve_centralized(prob)
            cache[name] = (prob, report, time.perf_counter() - start)
        return cache[name]

    return get


@pytest.fixture(scope="session")
def distributed():
    """distributed(name, **run_kwargs) -> (DistributedRun, seconds)."""
    cache = {}

    def get(name, **kwargs):
        key = (name, tuple(sorted(kwargs.items())))
        if key not in cache:
            start = time.perf_counter()
            result = run_distributed(load_fixture(name), **kwargs)
            cache[key] = (result, time.perf_counter() - start)
        return cache[key]

    return get

from __future__ import annotations

import numpy as np
import pytest

from levyflow.kinetic import default_force, make_kinetic_problem
from levyflow.levy_core import CompoundPoisson, GeneratingTriplet, PointJumps, sample_levy_path


@pytest.fixture(scope="session")
def kinetic_force():
    return default_force()


@pytest.fixture(scope="session")
def kinetic_problem(kinetic_force):
    return make_kinetic_problem(kinetic_force, 1.0)


@pytest.fixture(scope="session")
def brownian1():
    return GeneratingTriplet.brownian(1)


@pytest.fixture(scope="session")
def cp_point3():
    """Compound Poisson, intensity 2, every jump equal to +3."""
    return GeneratingTriplet(1, None, [CompoundPoisson(2.0, PointJumps([3.0]))])


@pytest.fixture
def brownian_path(brownian1):
    return sample_levy_path(brownian1, 1.0, 400, seed=11)


def assert_close(a, b, atol):
    np.testing.assert_allclose(np.asarray(a), np.asarray(b), rtol=0.0, atol=atol)


@pytest.fixture(scope="session")
def cp_point3_ensemble(cp_point3):
    """Endpoints and jump counts of 10^5 single-step paths of ``cp_point3``."""
    from levyflow import rng

    seeds = rng.ensemble_seeds(2024, 100_000)
    ends = np.empty(len(seeds))
    counts = np.empty(len(seeds), dtype=int)
    for i, sd in enumerate(seeds):
        P = sample_levy_path(cp_point3, 1.0, 1, sd)
        ends[i] = P.values[-1, 0]
        counts[i] = P.jump_times.size
    return ends, counts


_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])


@pytest.fixture
def record_criterion(request):
    """Record and print one PASS/FAIL line for a numbered acceptance criterion."""

    def record(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'} {title}: {detail}"
        request.config.stash[_CRITERIA][number, title] = line
        print(line)
        return passed

    return record

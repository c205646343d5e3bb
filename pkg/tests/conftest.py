import warnings

import numpy as np
import pytest

from cogsat_ra.scenario import Dimensions, Scenario, ScenarioSpec, generate_scenario

REFERENCE_DIMS = Dimensions(n_operators=5, sus_per_operator=4, beams=2, subbands=2, pus=12)


def make_scenario(N=1, B=1, M=1, L=1, g=1.0, f=0.0, eta=1.0, p_max=1.0):
    """Hand-built scenario with constant gains (scalars broadcast)."""
    dims = Dimensions(N, B * M, B, M, L)
    S = dims.n_sus
    G = np.broadcast_to(np.asarray(g, dtype=float), (S, B, M)).copy()
    F = np.broadcast_to(np.asarray(f, dtype=float), (S, L, M)).copy()
    E = np.broadcast_to(np.asarray(eta, dtype=float), (L, M)).copy()
    beam_of, operator_of = dims.canonical_layout()
    return Scenario(dims, G, F, E, p_max, beam_of, operator_of)


def tiny_scenario(seed, N=1):
    return generate_scenario(ScenarioSpec(dims=Dimensions(N, 2, 1, 2, 1), seed=seed))


@pytest.fixture(autouse=True)
def _quiet_numpy():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        yield


@pytest.fixture(scope="session")
def reference_scenario():
    return generate_scenario(ScenarioSpec(dims=REFERENCE_DIMS, seed=3))


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)

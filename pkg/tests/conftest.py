from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from behavior_transfer.envs import Mdp

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_mdp(rng: np.random.Generator, n_states: int = 5, n_actions: int = 2, terminal_frac: float = 0.0) -> Mdp:
    P = rng.random((n_states, n_actions, n_states)) ** 3
    P /= P.sum(axis=2, keepdims=True)
    R = rng.normal(size=(n_states, n_actions, n_states))
    d0 = np.zeros(n_states)
    d0[0] = 1.0
    term = rng.random(n_states) < terminal_frac
    term[0] = False
    return Mdp(n_states, n_actions, P, R, d0, term)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# (criterion number, passed, detail) lines collected by the acceptance suite
ACCEPTANCE_RESULTS: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'} - {detail}")

import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from mppctl.instances import constant_model, instance_d1, instance_d2, instance_single_state
from mppctl.model import ModelSpec, validate_model

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def d1():
    return instance_d1()


@pytest.fixture(scope="session")
def d2():
    return instance_d2()


@pytest.fixture(scope="session")
def single():
    return instance_single_state()


@pytest.fixture(scope="session")
def poisson2():
    """r = 2 everywhere, a = 1, T = 1, one action."""
    return constant_model(rate=1.0, r=2.0, n_states=2, n_actions=1)


@st.composite
def models(draw, max_states=3, max_actions=3, max_cells=4):
    """Random validated models with bounded coefficients."""
    n = draw(st.integers(1, max_states))
    U = draw(st.integers(1, max_actions))
    J = draw(st.integers(1, max_cells))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    cuts = np.sort(rng.uniform(0.05, 0.95, J - 1))
    horizon = float(rng.uniform(0.5, 1.5))
    grid = np.concatenate([[0.0], cuts * horizon, [horizon]])
    if np.any(np.diff(grid) <= 1e-3):
        grid = np.linspace(0.0, horizon, J + 1)
    phi = rng.dirichlet(np.ones(n), size=J)
    phi[:, -1] = 1.0 - phi[:, :-1].sum(axis=1)
    phi = np.clip(phi, 0.0, None)
    phi /= phi.sum(axis=1, keepdims=True)
    return validate_model(ModelSpec(
        states=[f"s{i}" for i in range(n)],
        actions=[f"a{i}" for i in range(U)],
        horizon=horizon,
        time_grid=grid,
        base_rate=rng.uniform(0.0, 2.0, J),
        mark_dist=phi,
        rate_modifier=rng.uniform(0.0, 2.0, (J, n, U)),
        running_cost=rng.uniform(-1.0, 1.0, (J, n, U)),
        terminal_cost=rng.uniform(-1.0, 1.0, n),
        C_r=2.0,
        C_l=1.0,
    ))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)

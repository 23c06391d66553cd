import numpy as np
import pytest

from tools.env_tool import GridSpec, make_gridworld
from tools.mdp_tool import TabularMDP, random_mdp


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run slow directional checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_random_mdp(rng):
    def factory(n_states=5, n_actions=3, gamma=0.9, **kwargs):
        return random_mdp(rng, n_states, n_actions, gamma, **kwargs)
    return factory


@pytest.fixture
def chain_mdp():
    """0 -> 1 deterministically, 1 absorbing with reward 1, gamma 0.5."""
    P = np.array([[[0.0, 1.0]], [[0.0, 1.0]]])
    r = np.array([[0.0], [1.0]])
    return TabularMDP(P=P, r=r, rho0=np.array([1.0, 0.0]), gamma=0.5, name="chain")


@pytest.fixture
def grid_spec():
    return GridSpec(width=3, height=3, terminal_cells=((2, 2),), reward_map={(2, 2): 1.0},
                    slip_prob=0.1, gamma=0.9)


@pytest.fixture
def small_grid(grid_spec):
    return make_gridworld(grid_spec)

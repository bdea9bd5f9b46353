import numpy as np
import pytest

from resrl.mdp import FiniteMdp, PolicyTable


def two_cycle(gamma=0.5, reward=1.0):
    """s0 -> s1 -> s0 with a single action."""
    p = np.zeros((2, 1, 2))
    p[0, 0, 1] = 1.0
    p[1, 0, 0] = 1.0
    return FiniteMdp(p, np.full((2, 1), reward), gamma), PolicyTable(np.ones((2, 1)))


def random_mdp(rng, n_states, n_actions, gamma=0.9):
    p = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    r = rng.normal(size=(n_states, n_actions))
    pi = PolicyTable(rng.dirichlet(np.ones(n_actions), size=n_states))
    return FiniteMdp(p, r, gamma), pi


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

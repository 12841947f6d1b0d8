import numpy as np
import pytest

from sinkbisim.mdp import FiniteMdp, StochasticPolicy


def random_mdp(rng, num_states, num_actions, gamma=0.9) -> FiniteMdp:
    p = rng.dirichlet(np.ones(num_states), size=(num_states, num_actions))
    r = rng.random((num_states, num_actions))
    return FiniteMdp(p, r, gamma)


def random_policy(rng, num_states, num_actions) -> StochasticPolicy:
    return StochasticPolicy(rng.dirichlet(np.ones(num_actions), size=num_states))


def random_metric(rng, n, scale=1.0) -> np.ndarray:
    pts = rng.random((n, 3)) * scale
    return np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

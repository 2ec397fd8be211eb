"""
Shared fixtures: seeded generators and random chain / MDP factories.
"""

import numpy as np
import pytest

from config import GridConfig, PatrolConfig, RandomConfig
from mdp_core import JointMDP


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def make_chain():
    def factory(rng, n: int) -> np.ndarray:
        return rng.dirichlet(np.ones(n), size=n)

    return factory


@pytest.fixture
def make_mdp():
    def factory(rng, n_states: int, n_actions: int, initial_state=None) -> JointMDP:
        kernel = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
        reward = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
        return JointMDP(kernel, reward, initial_state)

    return factory


@pytest.fixture
def grid_row1() -> GridConfig:
    return GridConfig(
        n_robots=2, grid_side=3, targets=[6], starts=[0, 2], c=0.9, delta_scenario=0.9, K=1, eta=0.75
    )


@pytest.fixture
def patrol_row1() -> PatrolConfig:
    return PatrolConfig(
        n_units=2, n_adversaries=1, n_locations=3, c=0.9, d=1.0, delta_scenario=0.9, beta=0.9, eta=0.75
    )


@pytest.fixture
def make_random():
    def factory(seed: int, states=(2, 2), actions=(2, 2), dependence=0.0, reward_model="coverage"):
        return RandomConfig(
            agent_state_sizes=list(states),
            agent_action_sizes=list(actions),
            dependence=dependence,
            reward_model=reward_model,
            seed=seed,
        )

    return factory

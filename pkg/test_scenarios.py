"""
Tests for the benchmark scenario builders.
"""

import numpy as np
import pytest

from config import GridConfig, PatrolConfig
from factored_mmdp import decode_joint, encode_joint
from mdp_core import reachable_states
from scenarios import (
    CoverageModel,
    build_grid,
    build_patrol,
    build_scenario,
    grid_robot_row,
    patrol_adversary_row,
    patrol_row_corrections,
    patrol_unit_row,
    random_instance,
    scenario_sizes,
    valid_action_count,
)


def grid(**overrides) -> GridConfig:
    values = dict(n_robots=2, grid_side=3, targets=[6], starts=[0, 2], c=0.9, delta_scenario=0.9, K=1, eta=0.75)
    values.update(overrides)
    return GridConfig(**values)


def patrol(**overrides) -> PatrolConfig:
    values = dict(n_units=2, n_adversaries=1, n_locations=3, c=0.9, d=1.0, delta_scenario=0.9, beta=0.9, eta=0.75)
    values.update(overrides)
    return PatrolConfig(**values)


def test_grid_sizes(grid_row1):
    mdp, spec = build_grid(grid_row1)
    assert (mdp.n_states, mdp.n_actions) == (81, 16)
    assert spec.m == 2
    assert mdp.initial_state == encode_joint(spec, (0, 2)) == 2

    sizes = scenario_sizes(grid(n_robots=4, grid_side=2, targets=[3], starts=[0, 1, 2, 3]))
    assert (sizes["n_states"], sizes["n_actions"]) == (256, 256)


def test_grid_reward_values(grid_row1):
    mdp, spec = build_grid(grid_row1)
    one_on_target = encode_joint(spec, (6, 0))
    both_on_target = encode_joint(spec, (6, 6))
    np.testing.assert_allclose(mdp.reward[one_on_target], 0.75)
    np.testing.assert_allclose(mdp.reward[both_on_target], 0.9375)
    np.testing.assert_allclose(mdp.reward[encode_joint(spec, (0, 2))], 0.0)


def test_grid_reachable_states(grid_row1):
    """Both robots change cell parity every step, so only same-parity pairs are reachable."""
    mdp, _ = build_grid(grid_row1)
    assert len(reachable_states(mdp, mdp.initial_state)) == 5 * 5 + 4 * 4


def test_grid_robot_rows():
    config = grid()
    free = grid_robot_row(config, 4, 3, collided=False)
    assert free[7] == pytest.approx(0.9)
    np.testing.assert_allclose(free[[1, 3, 5]], 0.1 / 3)
    assert free.sum() == pytest.approx(1.0)

    hit = grid_robot_row(config, 4, 3, collided=True)
    assert hit[7] == pytest.approx(0.81)
    np.testing.assert_allclose(hit[[1, 3, 5]], 0.19 / 3)

    off_grid = grid_robot_row(config, 0, 0, collided=False)
    np.testing.assert_allclose(off_grid[[1, 3]], 0.5)
    assert off_grid.sum() == pytest.approx(1.0)

    single = grid_robot_row(grid(grid_side=1, targets=[0], starts=[0, 0]), 0, 2, collided=True)
    np.testing.assert_array_equal(single, [1.0])


def test_grid_collisions_use_intended_cells():
    mdp, spec = build_grid(grid())
    s = encode_joint(spec, (3, 5))
    # both robots aim at the center cell 4: right from 3, left from 5
    a = encode_joint(spec, (2, 0), space="action")
    row = mdp.kernel[s, a].reshape(9, 9)
    assert row.sum(axis=1)[4] == pytest.approx(0.81)
    assert row.sum(axis=0)[4] == pytest.approx(0.81)

    # robot 1 walks off the grid and cannot collide
    apart = encode_joint(spec, (3, 2), space="action")
    assert mdp.kernel[s, apart].reshape(9, 9).sum(axis=1)[6] == pytest.approx(0.9)


def test_grid_tolerance_for_collisions():
    relaxed = grid(n_robots=3, starts=[0, 2, 8], K=2)
    mdp, spec = build_grid(relaxed)
    s = encode_joint(spec, (3, 5, 8))
    pair = encode_joint(spec, (2, 0, 0), space="action")
    assert mdp.kernel[s, pair].reshape(9, 9, 9).sum(axis=(1, 2))[4] == pytest.approx(0.9)


def test_valid_action_count():
    assert valid_action_count(grid()) == 4
    assert valid_action_count(grid(starts=[4, 4])) == 16
    assert valid_action_count(grid(grid_side=1, targets=[0], starts=[0, 0])) == 1


def test_patrol_sizes():
    assert scenario_sizes(patrol()) == {"n_states": 27, "n_actions": 9}
    mdp, spec = build_patrol(patrol(n_units=3, n_adversaries=2))
    assert (mdp.n_states, mdp.n_actions) == (243, 27)
    assert spec.agent_action_sizes == (3, 3, 3, 1, 1)


def test_patrol_rows_and_corrections():
    config = patrol()
    corrections = patrol_row_corrections(config)
    assert corrections["unit"] == pytest.approx(1.0 / (0.9 + 2 * 0.1 / 3))
    assert corrections["adversary"] == pytest.approx(1.0)
    for row in (
        patrol_unit_row(config, 1, False),
        patrol_unit_row(config, 1, True),
        patrol_adversary_row(config, 2, True),
    ):
        assert row.sum() == pytest.approx(1.0)
    assert patrol_unit_row(config, 1, False)[1] == pytest.approx(0.9 * corrections["unit"])
    assert patrol_adversary_row(config, 0, False)[0] == pytest.approx(1.0)

    single = patrol(n_locations=1)
    np.testing.assert_array_equal(patrol_unit_row(single, 0, True), [1.0])
    assert patrol_row_corrections(single)["unit_collided"] == 1.0


def test_patrol_reward_examples():
    """With certain moves, the reward is the capture value of the next positions."""
    mdp, spec = build_patrol(patrol(c=1.0, d=1.0, beta=1.0, delta_scenario=1.0))
    one_unit = encode_joint(spec, (0, 1, 0), space="action")
    two_units = encode_joint(spec, (0, 0, 0), space="action")
    missed = encode_joint(spec, (1, 2, 0), space="action")
    np.testing.assert_allclose(mdp.reward[:, one_unit], 0.75)
    np.testing.assert_allclose(mdp.reward[:, two_units], 0.9375)
    np.testing.assert_allclose(mdp.reward[:, missed], 0.0)


def test_patrol_reward_is_expected_capture():
    config = patrol()
    mdp, spec = build_patrol(config)
    capture = np.zeros(spec.n_states)
    for s in range(spec.n_states):
        u0, u1, adversary = decode_joint(spec, s)
        units_there = (u0 == adversary) + (u1 == adversary)
        capture[s] = 1.0 - 0.25 ** units_there
    np.testing.assert_allclose(mdp.reward, mdp.kernel @ capture, atol=1e-12)
    # the kernel ignores the current state
    np.testing.assert_allclose(mdp.kernel[5], mdp.kernel[0])


def test_patrol_adversary_policy_mixes_targets():
    config = patrol(c=1.0, d=1.0, beta=1.0, delta_scenario=1.0, adversary_policy=[[0.5, 0.5, 0.0]])
    mdp, spec = build_patrol(config)
    a = encode_joint(spec, (2, 2, 0), space="action")
    adversary_next = mdp.kernel[0, a].reshape(3, 3, 3).sum(axis=(0, 1))
    np.testing.assert_allclose(adversary_next, [0.5, 0.5, 0.0])


def test_patrol_adversary_targets():
    mdp, spec = build_patrol(patrol(c=1.0, d=1.0, beta=1.0, delta_scenario=1.0, adversary_targets=[2]))
    a = encode_joint(spec, (1, 1, 0), space="action")
    assert mdp.kernel[0, a, encode_joint(spec, (1, 1, 2))] == pytest.approx(1.0)


def test_coverage_diminishing_marginals():
    model = CoverageModel(np.array([1.0]), 0.75, ())
    values = model.value(np.arange(5)[:, None])
    marginals = np.diff(values)
    assert values[0] == 0.0
    assert np.all(marginals > 0)
    assert np.all(np.diff(marginals) < 0)


def test_coverage_expected_value():
    model = CoverageModel(np.array([1.0, 0.5]), 0.5, ())
    value = model.expected_value([np.array([1.0, 0.0]), np.array([0.5, 1.0])])
    assert value == pytest.approx(1.0 * (1 - 0.5 * 0.75) + 0.5 * 0.5)
    assert model.expected_value([]) == 0.0


def test_random_instance_is_seeded(make_random):
    first = random_instance(make_random(3, dependence=0.2))
    second = random_instance(make_random(3, dependence=0.2))
    np.testing.assert_array_equal(first.mdp.kernel, second.mdp.kernel)
    np.testing.assert_array_equal(first.mdp.reward, second.mdp.reward)
    np.testing.assert_allclose(first.mdp.reward, first.coverage.joint_reward(first.spec))


def test_random_uniform_rewards(make_random):
    instance = random_instance(make_random(1, states=(3,), actions=(2,), reward_model="uniform"))
    assert instance.coverage is None
    assert instance.mdp.reward.shape == (3, 2)


def test_build_scenario_dispatch(make_random, patrol_row1):
    mdp, spec = build_scenario(make_random(0, states=(2, 3), actions=(2, 2)))
    assert (mdp.n_states, mdp.n_actions) == (6, 4)
    mdp, spec = build_scenario(patrol_row1)
    assert mdp.n_states == 27


@pytest.mark.slow
def test_grid_four_robots_on_two_by_two():
    mdp, _ = build_grid(grid(n_robots=4, grid_side=2, targets=[3], starts=[0, 1, 2, 3]))
    assert (mdp.n_states, mdp.n_actions) == (256, 256)

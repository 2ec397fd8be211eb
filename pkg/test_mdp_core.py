import itertools

import numpy as np
import pytest

from errors import (
    NegativeProbability,
    NoConvergence,
    NonFiniteReward,
    NonStochasticRow,
    NotADistribution,
    NotErgodic,
    ShapeMismatch,
)
from mdp_core import (
    JointMDP,
    StationaryPolicy,
    average_reward,
    evaluate_policy,
    induced_chain,
    reachable_states,
    relative_value_iteration,
    restrict,
    simulate_average_reward,
    validate_mdp,
)


def two_state_chain_mdp():
    kernel = np.array([[[0.9, 0.1]], [[0.2, 0.8]]])
    reward = np.array([[0.0], [1.0]])
    return JointMDP(kernel, reward)


def slip_mdp():
    # action 0 stays, action 1 switches, each with slip 0.01
    kernel = np.array(
        [
            [[0.99, 0.01], [0.01, 0.99]],
            [[0.01, 0.99], [0.99, 0.01]],
        ]
    )
    reward = np.array([[0.0, 0.0], [1.0, 1.0]])
    return JointMDP(kernel, reward)


def test_validate_accepts_single_absorbing_state():
    validate_mdp(JointMDP(np.array([[[1.0]]]), np.array([[0.5]])))


def test_validate_rejects_short_row():
    kernel = np.array([[[0.97, 0.0]], [[0.0, 1.0]]])
    with pytest.raises(NonStochasticRow) as info:
        validate_mdp(JointMDP(kernel, np.zeros((2, 1))))
    assert info.value.state == 0
    assert info.value.row_sum == pytest.approx(0.97)


def test_validate_rejects_negative_entry():
    kernel = np.array([[[1.1, -0.1]], [[0.0, 1.0]]])
    with pytest.raises(NegativeProbability):
        validate_mdp(JointMDP(kernel, np.zeros((2, 1))))


def test_validate_rejects_non_finite_reward():
    with pytest.raises(NonFiniteReward):
        validate_mdp(JointMDP(np.array([[[1.0]]]), np.array([[np.nan]])))


def test_validate_rejects_reward_shape():
    with pytest.raises(ShapeMismatch):
        validate_mdp(JointMDP(np.array([[[1.0]]]), np.zeros((1, 2))))


def test_rvi_single_state_gain_is_reward():
    result = relative_value_iteration(JointMDP(np.array([[[1.0]]]), np.array([[0.7]])))
    assert result.gain == pytest.approx(0.7, abs=1e-9)


def test_rvi_slip_example():
    """Switch out of the empty state, stay in the rewarding one."""
    result = relative_value_iteration(slip_mdp())
    assert result.gain == pytest.approx(0.99, abs=1e-8)
    np.testing.assert_array_equal(result.policy.choice, [1, 0])
    assert result.bias[0] == 0.0


def test_average_reward_examples():
    single = JointMDP(np.array([[[1.0]]]), np.array([[0.4]]))
    assert average_reward(single, StationaryPolicy(np.array([0]))) == pytest.approx(0.4)

    symmetric = JointMDP(np.full((2, 1, 2), 0.5), np.array([[0.0], [1.0]]))
    assert average_reward(symmetric, StationaryPolicy(np.array([0, 0]))) == pytest.approx(0.5)

    assert average_reward(two_state_chain_mdp(), StationaryPolicy(np.array([0, 0]))) == pytest.approx(1 / 3)


def test_induced_chain_deterministic_and_mixed():
    mdp = slip_mdp()
    np.testing.assert_allclose(induced_chain(mdp, StationaryPolicy(np.array([1, 0]))), [[0.01, 0.99], [0.01, 0.99]])

    mixed = StationaryPolicy(np.array([[0.25, 0.75], [0.5, 0.5]]))
    chain = induced_chain(mdp, mixed)
    np.testing.assert_allclose(chain[0], 0.25 * mdp.kernel[0, 0] + 0.75 * mdp.kernel[0, 1])
    np.testing.assert_allclose(chain.sum(axis=1), 1.0, atol=1e-12)

    uniform = StationaryPolicy.uniform(2, 2)
    np.testing.assert_allclose(induced_chain(mdp, uniform), mdp.kernel.mean(axis=1))


def test_policies_are_checked_before_evaluation():
    mdp = slip_mdp()
    with pytest.raises(ShapeMismatch, match="outside"):
        induced_chain(mdp, StationaryPolicy(np.array([0, 2])))
    with pytest.raises(ShapeMismatch, match="outside"):
        average_reward(mdp, StationaryPolicy(np.array([-1, 0])))
    with pytest.raises(ShapeMismatch):
        induced_chain(mdp, StationaryPolicy(np.array([0])))
    with pytest.raises(ShapeMismatch, match="dtype"):
        induced_chain(mdp, StationaryPolicy(np.array([0.0, 1.0])))
    with pytest.raises(ShapeMismatch):
        induced_chain(mdp, StationaryPolicy(np.full((2, 3), 1 / 3)))
    with pytest.raises(NotADistribution):
        average_reward(mdp, StationaryPolicy(np.array([[1.5, -0.5], [0.5, 0.5]])))

    with pytest.raises(NonStochasticRow) as info:
        induced_chain(mdp, StationaryPolicy(np.array([[0.5, 0.5], [0.5, 0.5 + 1e-9]])))
    assert info.value.state == 1
    # drift below the row tolerance is accepted
    StationaryPolicy(np.array([[0.5, 0.5], [0.5, 0.5 + 1e-14]])).validate(2, 2)


def test_rvi_gain_matches_policy_evaluation(rng, make_mdp):
    for _ in range(20):
        mdp = make_mdp(rng, int(rng.integers(2, 21)), int(rng.integers(1, 5)))
        result = relative_value_iteration(mdp, tol=1e-9)
        assert abs(result.gain - average_reward(mdp, result.policy)) <= 1e-8


def test_rvi_beats_every_deterministic_policy(rng, make_mdp):
    for _ in range(15):
        n_states, n_actions = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        mdp = make_mdp(rng, n_states, n_actions)
        result = relative_value_iteration(mdp)
        best = max(
            average_reward(mdp, StationaryPolicy(np.array(actions)))
            for actions in itertools.product(range(n_actions), repeat=n_states)
        )
        assert result.gain >= best - 1e-8


def test_evaluate_policy_solves_poisson_equation(rng, make_mdp):
    mdp = make_mdp(rng, 6, 3)
    policy = StationaryPolicy(rng.integers(0, 3, size=6))
    result = evaluate_policy(mdp, policy)
    chain = induced_chain(mdp, policy)
    rewards = mdp.reward[np.arange(6), policy.choice]
    np.testing.assert_allclose(result.gain + result.bias, rewards + chain @ result.bias, atol=1e-10)
    assert result.bias[0] == 0.0
    assert result.gain == pytest.approx(average_reward(mdp, policy), abs=1e-12)


def test_reachable_states_and_restrict():
    kernel = np.zeros((3, 1, 3))
    kernel[0, 0, 1] = kernel[1, 0, 0] = 1.0
    kernel[2, 0] = [0.2, 0.3, 0.5]
    mdp = JointMDP(kernel, np.array([[0.0], [1.0], [5.0]]), initial_state=1)
    states = reachable_states(mdp, 0)
    np.testing.assert_array_equal(states, [0, 1])

    sub = restrict(mdp, states)
    assert sub.n_states == 2
    assert sub.initial_state == 1
    with pytest.raises(ShapeMismatch):
        restrict(mdp, np.array([1, 2]))


def test_rvi_needs_initial_state_on_split_chains():
    block = np.full((2, 2), 0.5)
    kernel = np.zeros((4, 1, 4))
    kernel[:2, 0, :2] = block
    kernel[2:, 0, 2:] = block
    reward = np.array([[0.0], [1.0], [0.0], [1.0]])

    with pytest.raises(NotErgodic):
        relative_value_iteration(JointMDP(kernel, reward))

    result = relative_value_iteration(JointMDP(kernel, reward, initial_state=0))
    assert result.gain == pytest.approx(0.5, abs=1e-9)
    assert result.bias.shape == (4,)


def test_rvi_periodic_chain_converges():
    kernel = np.array([[[0.0, 1.0]], [[1.0, 0.0]]])
    result = relative_value_iteration(JointMDP(kernel, np.array([[0.0], [1.0]])))
    assert result.gain == pytest.approx(0.5, abs=1e-9)


def test_rvi_reports_no_convergence(rng, make_mdp):
    with pytest.raises(NoConvergence) as info:
        relative_value_iteration(make_mdp(rng, 5, 2), tol=1e-15, max_iter=1)
    assert info.value.max_iter == 1


def test_simulated_reward_matches_exact():
    mean, stderr = simulate_average_reward(
        two_state_chain_mdp(), StationaryPolicy(np.array([0, 0])), n_steps=200000, seed=5
    )
    assert abs(mean - 1 / 3) < 0.02
    assert stderr > 0

"""
Dense finite MDPs under the average-reward criterion.

Holds the joint model, stationary policies, relative value iteration and
exact policy evaluation. Kernels are ``(S, A, S)`` arrays, rewards ``(S, A)``.
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order

from errors import (
    NegativeProbability,
    NoConvergence,
    NonFiniteReward,
    NonStochasticRow,
    NotErgodic,
    NotADistribution,
    ShapeMismatch,
    SingularSystem,
)
from markov_analysis import closed_class_from, ergodicity_check, stationary_distribution

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 100000
DEFAULT_APERIODICITY = 0.5
ROW_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class JointMDP:
    kernel: np.ndarray
    reward: np.ndarray
    initial_state: Optional[int] = None

    @property
    def n_states(self) -> int:
        return self.kernel.shape[0]

    @property
    def n_actions(self) -> int:
        return self.kernel.shape[1]

    @property
    def reward_bounds(self) -> Tuple[float, float]:
        return float(self.reward.min()), float(self.reward.max())


@dataclass(frozen=True, eq=False)
class StationaryPolicy:
    """Either an int action per state or an ``(S, A)`` table of action probabilities."""

    choice: np.ndarray

    @property
    def deterministic(self) -> bool:
        return self.choice.ndim == 1

    def as_matrix(self, n_actions: int) -> np.ndarray:
        if not self.deterministic:
            return self.choice
        matrix = np.zeros((self.choice.shape[0], n_actions))
        matrix[np.arange(self.choice.shape[0]), self.choice] = 1.0
        return matrix

    def validate(self, n_actions: int, n_states: Optional[int] = None) -> None:
        """
        Check action indices, or for a table, non-negative rows summing to one
        within ``ROW_SUM_TOL``.
        """
        choice = self.choice
        rows = choice.shape[0] if choice.ndim else 0
        if choice.ndim not in (1, 2) or (n_states is not None and rows != n_states):
            raise ShapeMismatch(f"policy shape {choice.shape} does not cover {n_states} states")
        if self.deterministic:
            if not np.issubdtype(choice.dtype, np.integer):
                raise ShapeMismatch(f"deterministic policy has dtype {choice.dtype}, expected integers")
            bad = np.flatnonzero((choice < 0) | (choice >= n_actions))
            if bad.size:
                s = int(bad[0])
                raise ShapeMismatch(f"action {int(choice[s])} at state {s} outside [0, {n_actions})")
            return
        if choice.shape[1] != n_actions:
            raise ShapeMismatch(f"policy table has {choice.shape[1]} actions, expected {n_actions}")
        negative = np.argwhere(choice < 0)
        if negative.size:
            s, a = negative[0]
            raise NotADistribution(f"policy row {int(s)} has probability {float(choice[s, a])!r} for action {int(a)}")
        sums = choice.sum(axis=1)
        bad = np.flatnonzero(np.abs(sums - 1.0) > ROW_SUM_TOL)
        if bad.size:
            s = int(bad[0])
            raise NonStochasticRow(s, None, float(sums[s]))

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "StationaryPolicy":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))


@dataclass(frozen=True, eq=False)
class GainBias:
    gain: float
    bias: np.ndarray
    policy: StationaryPolicy
    iterations: int = 0
    span: float = 0.0


def validate_mdp(mdp: JointMDP) -> None:
    """
    Check shapes, kernel entries, row sums and reward finiteness.
    """
    kernel, reward = mdp.kernel, mdp.reward
    if kernel.ndim != 3 or kernel.shape[0] != kernel.shape[2]:
        raise ShapeMismatch(f"kernel shape {kernel.shape} is not (S, A, S)")
    if reward.shape != kernel.shape[:2]:
        raise ShapeMismatch(f"reward shape {reward.shape} does not match kernel {kernel.shape[:2]}")
    if mdp.initial_state is not None and not 0 <= mdp.initial_state < kernel.shape[0]:
        raise ShapeMismatch(f"initial state {mdp.initial_state} outside [0, {kernel.shape[0]})")

    negative = np.argwhere(kernel < 0)
    if negative.size:
        s, a, t = negative[0]
        raise NegativeProbability(int(s), int(a), int(t), float(kernel[s, a, t]))
    sums = kernel.sum(axis=2)
    bad = np.argwhere(np.abs(sums - 1.0) > ROW_SUM_TOL)
    if bad.size:
        s, a = bad[0]
        raise NonStochasticRow(int(s), int(a), float(sums[s, a]))
    non_finite = np.argwhere(~np.isfinite(reward))
    if non_finite.size:
        s, a = non_finite[0]
        raise NonFiniteReward(int(s), int(a))


def induced_chain(mdp: JointMDP, policy: StationaryPolicy) -> np.ndarray:
    policy.validate(mdp.n_actions, mdp.n_states)
    if policy.deterministic:
        return mdp.kernel[np.arange(mdp.n_states), policy.choice, :]
    return np.einsum("sa,sat->st", policy.as_matrix(mdp.n_actions), mdp.kernel)


def policy_reward(mdp: JointMDP, policy: StationaryPolicy) -> np.ndarray:
    if policy.deterministic:
        return mdp.reward[np.arange(mdp.n_states), policy.choice]
    return (policy.as_matrix(mdp.n_actions) * mdp.reward).sum(axis=1)


def reachable_states(mdp: JointMDP, start: int) -> np.ndarray:
    """States reachable from ``start`` under some sequence of actions."""
    support = csr_matrix(mdp.kernel.max(axis=1) > 0)
    order = breadth_first_order(support, start, directed=True, return_predecessors=False)
    return np.sort(order)


def restrict(mdp: JointMDP, states: np.ndarray) -> JointMDP:
    """
    Sub-MDP on a set of states closed under every action.
    """
    states = np.asarray(states)
    kernel = mdp.kernel[states][:, :, states]
    leak = np.abs(kernel.sum(axis=2) - 1.0).max()
    if leak > ROW_SUM_TOL * 10:
        raise ShapeMismatch(f"state subset is not closed (mass {leak:.3e} leaves it)")
    initial = None
    if mdp.initial_state is not None:
        initial = int(np.searchsorted(states, mdp.initial_state))
    return JointMDP(kernel, mdp.reward[states], initial)


def _evaluation_states(mdp: JointMDP, chain: np.ndarray) -> np.ndarray:
    if mdp.initial_state is None:
        return np.arange(mdp.n_states)
    return closed_class_from(chain, mdp.initial_state)


def average_reward(mdp: JointMDP, policy: StationaryPolicy) -> float:
    """
    Long-run reward per stage, q·r over the policy's chain.

    With an initial state the chain is first restricted to the states it
    reaches from there.
    """
    chain = induced_chain(mdp, policy)
    rewards = policy_reward(mdp, policy)
    states = _evaluation_states(mdp, chain)
    q = stationary_distribution(chain[np.ix_(states, states)])
    return float(q.probs @ rewards[states])


def evaluate_policy(mdp: JointMDP, policy: StationaryPolicy, reference_state: int = 0) -> GainBias:
    """
    Exact gain and bias of a policy; bias is pinned to 0 at the reference state
    (taken relative to the evaluated state set).
    """
    chain = induced_chain(mdp, policy)
    rewards = policy_reward(mdp, policy)
    states = _evaluation_states(mdp, chain)
    P = chain[np.ix_(states, states)]
    r = rewards[states]
    gain = float(stationary_distribution(P).probs @ r)

    # (I - P) h + g 1 = r with h[ref] = 0; column ref of the system carries g
    n = len(states)
    system = np.eye(n) - P
    system[:, reference_state] = 1.0
    try:
        solution = scipy.linalg.solve(system, r)
    except (scipy.linalg.LinAlgError, ValueError) as e:
        raise SingularSystem(f"bias solve failed: {e}")
    h = solution.copy()
    h[reference_state] = 0.0
    bias = np.zeros(mdp.n_states)
    bias[states] = h
    return GainBias(gain, bias, policy)


def relative_value_iteration(
    mdp: JointMDP,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    aperiodicity: float = DEFAULT_APERIODICITY,
    reference_state: int = 0,
) -> GainBias:
    """
    Relative value iteration for the gain-optimal policy.

    Each sweep applies the Bellman operator of the aperiodicity-transformed
    kernel ``τP + (1 − τ)I`` (same gains, same optimal policies), subtracts the
    reference state's value, and stops once the span of ``Th − h`` is at most
    ``tol``. Ties in the greedy argmax go to the lowest action index.

    With an initial state the sweep runs on the states reachable from it and
    the returned bias and policy are padded with zeros elsewhere.
    """
    if not 0.0 < aperiodicity <= 1.0:
        raise ValueError(f"aperiodicity must lie in (0, 1], got {aperiodicity}")
    full = mdp
    states = None
    if mdp.initial_state is not None:
        states = reachable_states(mdp, mdp.initial_state)
        if len(states) < mdp.n_states:
            mdp = restrict(mdp, states)
        else:
            states = None

    n_states, n_actions = mdp.n_states, mdp.n_actions
    stacked = mdp.kernel.reshape(n_states * n_actions, n_states)
    h = np.zeros(n_states)
    span = np.inf
    for iteration in range(1, max_iter + 1):
        q = mdp.reward + aperiodicity * (stacked @ h).reshape(n_states, n_actions)
        q += (1.0 - aperiodicity) * h[:, None]
        th = q.max(axis=1)
        diff = th - h
        span = float(diff.max() - diff.min())
        h = th - th[reference_state]
        if span <= tol:
            break
    else:
        raise NoConvergence(max_iter, span)

    actions = q.argmax(axis=1)
    gain = 0.5 * float(diff.max() + diff.min())
    logger.debug("rvi converged in %d sweeps, gain %.12g", iteration, gain)

    chain = mdp.kernel[np.arange(n_states), actions, :]
    if mdp.initial_state is not None:
        members = closed_class_from(chain, mdp.initial_state)
        chain = chain[np.ix_(members, members)]
    structure = ergodicity_check(chain)
    if not structure.unichain:
        raise NotErgodic(
            f"greedy policy induces {len(structure.recurrent_classes)} recurrent classes"
        )

    if states is None:
        return GainBias(gain, h, StationaryPolicy(actions), iteration, span)
    full_actions = np.zeros(full.n_states, dtype=int)
    full_actions[states] = actions
    full_bias = np.zeros(full.n_states)
    full_bias[states] = h
    return GainBias(gain, full_bias, StationaryPolicy(full_actions), iteration, span)


def simulate_average_reward(
    mdp: JointMDP,
    policy: StationaryPolicy,
    n_steps: int,
    seed: int = 0,
    start: Optional[int] = None,
    n_batches: int = 50,
) -> Tuple[float, float]:
    """
    Monte-Carlo estimate of the gain with a batch-means standard error.
    """
    rng = np.random.default_rng(seed)
    chain = induced_chain(mdp, policy)
    rewards = policy_reward(mdp, policy)
    cumulative = np.cumsum(chain, axis=1)
    if start is None:
        start = mdp.initial_state if mdp.initial_state is not None else 0
    draws = rng.random(n_steps)
    trace = np.empty(n_steps)
    state = start
    last = mdp.n_states - 1
    for t in range(n_steps):
        trace[t] = rewards[state]
        state = min(int(np.searchsorted(cumulative[state], draws[t], side="right")), last)
    batches = np.array_split(trace, n_batches)
    means = np.array([batch.mean() for batch in batches])
    return float(trace.mean()), float(means.std(ddof=1) / np.sqrt(n_batches))

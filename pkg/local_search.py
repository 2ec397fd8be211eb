"""
Local-policy search over per-agent local MDPs.

Each agent sees its own state space, a transition kernel averaged over the
other agents (and the environment) and a reward averaged under their current
stationary behaviour. Agents take turns solving their local MDP and adopt the
new policy when it beats the incumbent by the configured factor.
"""

import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from config import SearchConfig
from factored_mmdp import FactoredSpec, LocalPolicySet, check_dimensions, decode_joint, lift_policy
from markov_analysis import closed_class_from, stationary_distribution
from mdp_core import JointMDP, StationaryPolicy, average_reward, relative_value_iteration

logger = logging.getLogger(__name__)

KERNEL_TOL = 1e-9
OPTIMALITY_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class CompanionDistribution:
    """Weights over the joint companion states of one agent (environment first)."""

    agent: int
    weights: np.ndarray
    mode: str = "uniform"

    @classmethod
    def uniform(cls, spec: FactoredSpec, i: int) -> "CompanionDistribution":
        n = spec.n_states // spec.agent_state_sizes[i]
        return cls(i, np.full(n, 1.0 / n), "uniform")

    @classmethod
    def sampled(cls, spec: FactoredSpec, i: int, n_samples: int, rng) -> "CompanionDistribution":
        n = spec.n_states // spec.agent_state_sizes[i]
        draws = rng.integers(0, n, size=n_samples)
        return cls(i, np.bincount(draws, minlength=n) / n_samples, "sampled")

    @classmethod
    def product(
        cls, spec: FactoredSpec, i: int, stationary: Sequence[np.ndarray]
    ) -> "CompanionDistribution":
        weights = spec.env_weights() if spec.has_env else np.ones(1)
        for j in range(spec.m):
            if j != i:
                weights = np.outer(weights, stationary[j]).ravel()
        return cls(i, weights, "product")


@dataclass(frozen=True, eq=False)
class LocalMDP:
    agent: int
    kernel: np.ndarray
    reward: np.ndarray
    iteration: int = 0
    initial_state: Optional[int] = None

    def as_mdp(self) -> JointMDP:
        return JointMDP(self.kernel, self.reward, self.initial_state)


@dataclass(frozen=True)
class RoundRecord:
    round: int
    agent: Optional[int]
    kind: str
    old_gain: Optional[float] = None
    new_gain: Optional[float] = None
    elapsed_s: float = 0.0


@dataclass(frozen=True, eq=False)
class SearchTrace:
    records: Tuple[RoundRecord, ...]
    policy: LocalPolicySet
    local_tables: Tuple[np.ndarray, ...]
    stationary: Tuple[np.ndarray, ...]
    local_kernels: Tuple[np.ndarray, ...]
    local_gains: Tuple[Optional[float], ...]
    reason: str
    rounds: int
    runtime_s: float
    renormalized_rows: int = 0

    @property
    def improvements(self) -> int:
        return sum(1 for r in self.records if r.kind == "improve")

    @property
    def converged(self) -> bool:
        return self.reason == "converged"


@dataclass(frozen=True)
class LocalOptimality:
    agent: int
    best_gain: float
    incumbent_gain: float
    ok: bool


def _companion_layout(spec: FactoredSpec, i: int):
    """Axes, sizes and component table of agent ``i``'s companion states."""
    p = spec.agent_axis(i)
    axes = [ax for ax in range(len(spec.state_dims)) if ax != p]
    dims = tuple(spec.state_dims[ax] for ax in axes)
    if not dims:
        return axes, dims, np.zeros((1, 0), dtype=int)
    n = int(np.prod(dims))
    return axes, dims, np.stack(np.unravel_index(np.arange(n), dims), axis=1)


def _companion_actions(spec: FactoredSpec, i: int, policy: LocalPolicySet) -> np.ndarray:
    """``(companion states, companion actions)`` probabilities under ``policy``."""
    axes, _, comps = _companion_layout(spec, i)
    n = comps.shape[0]
    env = comps[:, 0] if spec.has_env else np.zeros(n, dtype=int)
    pi = np.ones((n, 1))
    for j in range(spec.m):
        if j == i:
            continue
        own = comps[:, axes.index(spec.agent_axis(j))]
        probs = policy.probabilities(j, spec.agent_action_sizes[j])[env, own]
        pi = (pi[:, :, None] * probs[:, None, :]).reshape(n, -1)
    return pi


def _own_first(tensor: np.ndarray, spec: FactoredSpec, i: int, trailing: int) -> np.ndarray:
    """Move agent ``i``'s state and action axes to the front of a factored tensor."""
    ns, na = len(spec.state_dims), len(spec.action_dims)
    p = spec.agent_axis(i)
    others_s = [ax for ax in range(ns) if ax != p]
    others_a = [ns + j for j in range(na) if j != i]
    rest = list(range(ns + na, ns + na + trailing))
    moved = tensor.transpose([p, ns + i] + others_s + others_a + rest)
    n_own = spec.state_dims[p]
    n_companions = spec.n_states // n_own
    return moved.reshape((n_own, spec.action_dims[i], n_companions, -1) + moved.shape[ns + na:])


def _renormalize(kernel: np.ndarray, agent: int) -> Tuple[np.ndarray, int]:
    sums = kernel.sum(axis=2)
    off = np.abs(sums - 1.0) > KERNEL_TOL
    n_fixed = int(off.sum())
    if n_fixed:
        logger.warning("agent %d: renormalized %d local kernel rows", agent, n_fixed)
    return kernel / sums[..., None], n_fixed


def next_state_marginals(mdp: JointMDP, spec: FactoredSpec) -> List[np.ndarray]:
    """
    Every agent's next-state marginal ``(S, A, S_i)`` from a single pass over
    the joint kernel.
    """
    comps = spec.state_components
    indicator = np.concatenate(
        [
            np.equal.outer(comps[:, spec.agent_axis(i)], np.arange(n_own))
            for i, n_own in enumerate(spec.agent_state_sizes)
        ],
        axis=1,
    ).astype(mdp.kernel.dtype)
    flat = mdp.kernel.reshape(-1, mdp.n_states) @ indicator
    blocks = np.split(flat, np.cumsum(spec.agent_state_sizes)[:-1], axis=1)
    return [block.reshape(mdp.n_states, mdp.n_actions, -1) for block in blocks]


def _next_state_marginal(mdp: JointMDP, spec: FactoredSpec, i: int) -> np.ndarray:
    p = spec.agent_axis(i)
    before = int(np.prod(spec.state_dims[:p]))
    after = int(np.prod(spec.state_dims[p + 1 :]))
    shaped = mdp.kernel.reshape(mdp.n_states, mdp.n_actions, before, spec.state_dims[p], after)
    return shaped.sum(axis=(2, 4))


def _local_transition(mdp, spec, i, companions, companion_policy, marginal=None) -> Tuple[np.ndarray, int]:
    if marginal is None:
        marginal = _next_state_marginal(mdp, spec, i)
    n_own = spec.state_dims[spec.agent_axis(i)]
    moved = _own_first(marginal.reshape(spec.state_dims + spec.action_dims + (n_own,)), spec, i, trailing=1)

    support = np.flatnonzero(companions.weights)
    pi = _companion_actions(spec, i, companion_policy)[support]
    kernel = np.einsum("xacdy,c,cd->xay", moved[:, :, support], companions.weights[support], pi)
    return _renormalize(kernel, i)


def local_transition(
    mdp: JointMDP,
    spec: FactoredSpec,
    i: int,
    companions: CompanionDistribution,
    companion_policy: LocalPolicySet,
) -> np.ndarray:
    """
    Agent ``i``'s kernel ``(S_i, A_i, S_i)``: the joint kernel's marginal for
    agent ``i`` averaged over companion states drawn from ``companions`` and
    companion actions drawn from ``companion_policy``.
    """
    return _local_transition(mdp, spec, i, companions, companion_policy)[0]


def local_reward(
    mdp: JointMDP,
    spec: FactoredSpec,
    i: int,
    companion_q: Sequence[np.ndarray],
    companion_policy: LocalPolicySet,
) -> np.ndarray:
    """
    Agent ``i``'s reward ``(S_i, A_i)`` with companion states weighted by the
    product of the other agents' stationary distributions (and the
    environment's stationary weights).
    """
    weights = CompanionDistribution.product(spec, i, companion_q).weights
    tensor = mdp.reward.reshape(spec.state_dims + spec.action_dims)
    moved = _own_first(tensor, spec, i, trailing=0)
    support = np.flatnonzero(weights)
    pi = _companion_actions(spec, i, companion_policy)[support]
    return np.einsum("xacd,c,cd->xa", moved[:, :, support], weights[support], pi)


def local_chain(kernel: np.ndarray, policy_probs: np.ndarray) -> np.ndarray:
    return np.einsum("sa,sat->st", policy_probs, kernel)


def _as_probs(table: np.ndarray, n_actions: int) -> np.ndarray:
    if table.ndim == 2:
        return table
    return StationaryPolicy(table).as_matrix(n_actions)


def _local_stationary(kernel: np.ndarray, table: np.ndarray, start: Optional[int]) -> np.ndarray:
    chain = local_chain(kernel, _as_probs(table, kernel.shape[1]))
    if start is None:
        return stationary_distribution(chain).probs
    states = closed_class_from(chain, start)
    q = np.zeros(chain.shape[0])
    q[states] = stationary_distribution(chain[np.ix_(states, states)]).probs
    return q


def _local_starts(mdp: JointMDP, spec: FactoredSpec) -> List[Optional[int]]:
    if mdp.initial_state is None:
        return [None] * spec.m
    components = decode_joint(spec, mdp.initial_state)
    return [components[spec.agent_axis(i)] for i in range(spec.m)]


def _companions(spec, config, stationary, rng) -> List[CompanionDistribution]:
    mode = config.companion_mode
    if mode == "product" and stationary is not None:
        return [CompanionDistribution.product(spec, i, stationary) for i in range(spec.m)]
    if mode == "sampled":
        n_samples = config.companion_samples or max(1, spec.m * max(spec.agent_state_sizes) // 2)
        return [CompanionDistribution.sampled(spec, i, n_samples, rng) for i in range(spec.m)]
    return [CompanionDistribution.uniform(spec, i) for i in range(spec.m)]


def _initial_table(n_states: int, n_actions: int) -> np.ndarray:
    if n_actions == 1:
        return np.zeros(n_states, dtype=int)
    return np.full((n_states, n_actions), 1.0 / n_actions)


def run_algorithm1(mdp: JointMDP, spec: FactoredSpec, config: Optional[SearchConfig] = None) -> SearchTrace:
    """
    Iterative local-policy improvement.

    Starts every agent on the uniform stochastic policy, builds the local
    kernels once, then sweeps agents in index order: rebuild the local reward,
    solve the local MDP, and adopt the solution when its exact local gain
    exceeds ``(1 + ε)`` times the incumbent's plus ``improvement_margin``.
    An adoption restarts the sweep. A sweep without adoption ends the search,
    except that an agent still on its stochastic start policy first takes its
    greedy solution.
    """
    config = config or SearchConfig()
    check_dimensions(spec, mdp)
    started = time.perf_counter()
    rng = np.random.default_rng(config.seed)
    starts = _local_starts(mdp, spec)

    tables = [_initial_table(s, a) for s, a in zip(spec.agent_state_sizes, spec.agent_action_sizes)]

    def policy_set() -> LocalPolicySet:
        return LocalPolicySet.from_local(spec, tables)

    marginals = next_state_marginals(mdp, spec)

    def build_kernels(stationary):
        companions = _companions(spec, config, stationary, rng)
        built = [
            _local_transition(mdp, spec, i, companions[i], policy_set(), marginals[i]) for i in range(spec.m)
        ]
        return [k for k, _ in built], sum(n for _, n in built)

    kernels, renormalized = build_kernels(None)
    stationary = [_local_stationary(kernels[i], tables[i], starts[i]) for i in range(spec.m)]
    if config.companion_mode == "product":
        kernels, fixed = build_kernels(stationary)
        renormalized += fixed
        stationary = [_local_stationary(kernels[i], tables[i], starts[i]) for i in range(spec.m)]

    records: List[RoundRecord] = []
    gains: List[Optional[float]] = [None] * spec.m
    # agent -> (reward, table, old gain, new gain, greedy choice) of its last solve
    solved_last: dict = {}
    reason = "round_cap"
    rounds = 0
    while rounds < config.max_rounds:
        rounds += 1
        adopted = None
        greedy = {}
        for i in range(spec.m):
            if spec.agent_action_sizes[i] == 1:
                continue
            reward = local_reward(mdp, spec, i, stationary, policy_set())
            last = solved_last.get(i)
            if last is not None and np.array_equal(last[0], reward) and np.array_equal(last[1], tables[i]):
                old_gain, new_gain, choice = last[2:]
            else:
                local = LocalMDP(i, kernels[i], reward, rounds, starts[i]).as_mdp()
                solved = relative_value_iteration(
                    local, tol=config.tol, max_iter=config.max_iter, aperiodicity=config.aperiodicity
                )
                old_gain = average_reward(local, StationaryPolicy(tables[i]))
                new_gain = average_reward(local, solved.policy)
                choice = solved.policy.choice
                solved_last[i] = (reward, tables[i].copy(), old_gain, new_gain, choice)
            gains[i] = old_gain
            greedy[i] = (choice, new_gain)
            if new_gain > (1.0 + config.epsilon) * old_gain + config.improvement_margin:
                adopted = (i, "improve", old_gain, new_gain)
                break

        if adopted is None:
            pending = [i for i in greedy if tables[i].ndim == 2]
            if not pending:
                reason = "converged"
                records.append(RoundRecord(rounds, None, "converged", elapsed_s=time.perf_counter() - started))
                break
            i = pending[0]
            adopted = (i, "determinize", gains[i], greedy[i][1])

        i, kind, old_gain, new_gain = adopted
        tables[i] = greedy[i][0]
        gains[i] = new_gain
        records.append(RoundRecord(rounds, i, kind, old_gain, new_gain, time.perf_counter() - started))
        logger.debug("round %d: agent %d %s, local gain %.12g -> %.12g", rounds, i, kind, old_gain, new_gain)

        if config.refresh_transitions:
            kernels, fixed = build_kernels(stationary)
            solved_last.clear()
            renormalized += fixed
            stationary = [_local_stationary(kernels[j], tables[j], starts[j]) for j in range(spec.m)]
        else:
            stationary[i] = _local_stationary(kernels[i], tables[i], starts[i])

    runtime = time.perf_counter() - started
    if reason == "round_cap":
        logger.warning("local search stopped at the round cap (%d rounds)", config.max_rounds)
    logger.info("local search %s after %d rounds in %.3fs", reason, rounds, runtime)
    return SearchTrace(
        records=tuple(records),
        policy=policy_set(),
        local_tables=tuple(tables),
        stationary=tuple(stationary),
        local_kernels=tuple(kernels),
        local_gains=tuple(gains),
        reason=reason,
        rounds=rounds,
        runtime_s=runtime,
        renormalized_rows=renormalized,
    )


def evaluate_on_joint(mdp: JointMDP, spec: FactoredSpec, policy: LocalPolicySet) -> float:
    """Average reward of the joint policy assembled from local tables."""
    return average_reward(mdp, lift_policy(spec, policy))


def check_local_optimality(
    mdp: JointMDP, spec: FactoredSpec, trace: SearchTrace, config: Optional[SearchConfig] = None
) -> List[LocalOptimality]:
    """
    Re-solve every agent's final local MDP and compare against its incumbent.
    """
    config = config or SearchConfig()
    starts = _local_starts(mdp, spec)
    results = []
    for i in range(spec.m):
        if spec.agent_action_sizes[i] == 1:
            continue
        reward = local_reward(mdp, spec, i, trace.stationary, trace.policy)
        local = LocalMDP(i, trace.local_kernels[i], reward, trace.rounds, starts[i]).as_mdp()
        solved = relative_value_iteration(
            local, tol=config.tol, max_iter=config.max_iter, aperiodicity=config.aperiodicity
        )
        best = average_reward(local, solved.policy)
        incumbent = average_reward(local, StationaryPolicy(trace.local_tables[i]))
        bound = (1.0 + config.epsilon) * incumbent + config.improvement_margin + OPTIMALITY_SLACK
        results.append(LocalOptimality(i, best, incumbent, best <= bound))
    return results

"""
Factored state and action spaces of a multi-agent MDP.

Joint indices use mixed radix with the environment component (when present)
first and agent 0 most significant. The module also measures how strongly one
agent's next state depends on the others (the δ of δ-dependence) and builds
the transition-independent surrogate from per-agent kernels.
"""

import logging
from dataclasses import dataclass, replace
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np

from errors import (
    BudgetExceeded,
    ComponentOutOfRange,
    NonStochasticRow,
    ShapeMismatch,
    ZeroProbabilityConditioning,
)
from markov_analysis import check_stochastic, stationary_distribution
from mdp_core import JointMDP, StationaryPolicy, validate_mdp

logger = logging.getLogger(__name__)

EXHAUSTIVE_CONTEXT_LIMIT = 4096
DEFAULT_DELTA_BUDGET = 1_000_000
ZERO_MASS = 1e-15
KERNEL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class FactoredSpec:
    agent_state_sizes: Tuple[int, ...]
    agent_action_sizes: Tuple[int, ...]
    env_state_size: int = 1
    env_kernel: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.agent_state_sizes) != len(self.agent_action_sizes):
            raise ShapeMismatch("agent state and action size lists differ in length")
        if not self.agent_state_sizes:
            raise ShapeMismatch("a factored spec needs at least one agent")
        if min(self.agent_state_sizes + self.agent_action_sizes + (self.env_state_size,)) < 1:
            raise ShapeMismatch("all component sizes must be at least 1")
        if self.env_kernel is not None:
            kernel = check_stochastic(self.env_kernel, tol=KERNEL_TOL)
            if kernel.shape[0] != self.env_state_size:
                raise ShapeMismatch(
                    f"environment kernel is {kernel.shape}, expected size {self.env_state_size}"
                )

    @property
    def m(self) -> int:
        return len(self.agent_state_sizes)

    @property
    def has_env(self) -> bool:
        return self.env_state_size > 1

    @property
    def state_dims(self) -> Tuple[int, ...]:
        env = (self.env_state_size,) if self.has_env else ()
        return env + tuple(self.agent_state_sizes)

    @property
    def action_dims(self) -> Tuple[int, ...]:
        return tuple(self.agent_action_sizes)

    @property
    def n_states(self) -> int:
        return int(np.prod(self.state_dims))

    @property
    def n_actions(self) -> int:
        return int(np.prod(self.action_dims))

    def agent_axis(self, i: int) -> int:
        return i + int(self.has_env)

    @cached_property
    def state_components(self) -> np.ndarray:
        """``(S, k)`` table of components for every joint state."""
        return np.stack(np.unravel_index(np.arange(self.n_states), self.state_dims), axis=1)

    @cached_property
    def action_components(self) -> np.ndarray:
        return np.stack(np.unravel_index(np.arange(self.n_actions), self.action_dims), axis=1)

    def env_of_states(self) -> np.ndarray:
        if not self.has_env:
            return np.zeros(self.n_states, dtype=int)
        return self.state_components[:, 0]

    def env_weights(self) -> np.ndarray:
        """Stationary weights of the environment chain (uniform without a kernel)."""
        if self.env_kernel is None:
            return np.full(self.env_state_size, 1.0 / self.env_state_size)
        return stationary_distribution(self.env_kernel).probs


def _dims(spec: FactoredSpec, space: str) -> Tuple[int, ...]:
    if space == "state":
        return spec.state_dims
    if space == "action":
        return spec.action_dims
    raise ValueError(f"unknown space {space!r}")


def encode_joint(spec: FactoredSpec, components: Sequence[int], space: str = "state") -> int:
    dims = _dims(spec, space)
    if len(components) != len(dims):
        raise ShapeMismatch(f"expected {len(dims)} components, got {len(components)}")
    for position, (value, size) in enumerate(zip(components, dims)):
        if not 0 <= value < size:
            raise ComponentOutOfRange(position, int(value), size)
    return int(np.ravel_multi_index(tuple(int(c) for c in components), dims))


def decode_joint(spec: FactoredSpec, index: int, space: str = "state") -> Tuple[int, ...]:
    dims = _dims(spec, space)
    total = int(np.prod(dims))
    if not 0 <= index < total:
        raise ComponentOutOfRange(0, int(index), total)
    return tuple(int(c) for c in np.unravel_index(int(index), dims))


def check_dimensions(spec: FactoredSpec, mdp: JointMDP) -> None:
    if (spec.n_states, spec.n_actions) != (mdp.n_states, mdp.n_actions):
        raise ShapeMismatch(
            f"spec describes {spec.n_states}x{spec.n_actions} joint spaces, "
            f"MDP has {mdp.n_states}x{mdp.n_actions}"
        )


@dataclass(frozen=True, eq=False)
class LocalPolicySet:
    """
    One table per agent indexed ``(env_state, own_state)``.

    A table is either integer actions of shape ``(S_0, S_i)`` or action
    probabilities of shape ``(S_0, S_i, A_i)``.
    """

    tables: Tuple[np.ndarray, ...]

    @property
    def deterministic(self) -> bool:
        return all(table.ndim == 2 for table in self.tables)

    def is_deterministic(self, i: int) -> bool:
        return self.tables[i].ndim == 2

    def probabilities(self, i: int, n_actions: int) -> np.ndarray:
        table = self.tables[i]
        if table.ndim == 3:
            return table
        probs = np.zeros(table.shape + (n_actions,))
        np.put_along_axis(probs, table[..., None], 1.0, axis=-1)
        return probs

    def with_agent(self, i: int, table: np.ndarray) -> "LocalPolicySet":
        tables = list(self.tables)
        tables[i] = table
        return replace(self, tables=tuple(tables))

    def validate(self, spec: FactoredSpec) -> None:
        if len(self.tables) != spec.m:
            raise ShapeMismatch(f"{len(self.tables)} policy tables for {spec.m} agents")
        for i, table in enumerate(self.tables):
            expected = (spec.env_state_size, spec.agent_state_sizes[i])
            if table.shape[:2] != expected:
                raise ShapeMismatch(f"agent {i} table has shape {table.shape}, expected {expected}")
            if table.ndim == 2:
                bad = table[(table < 0) | (table >= spec.agent_action_sizes[i])]
                if bad.size:
                    raise ComponentOutOfRange(i, int(bad[0]), spec.agent_action_sizes[i])

    @classmethod
    def uniform(cls, spec: FactoredSpec) -> "LocalPolicySet":
        tables = []
        for n_own, n_act in zip(spec.agent_state_sizes, spec.agent_action_sizes):
            if n_act == 1:
                tables.append(np.zeros((spec.env_state_size, n_own), dtype=int))
            else:
                tables.append(np.full((spec.env_state_size, n_own, n_act), 1.0 / n_act))
        return cls(tuple(tables))

    @classmethod
    def from_local(cls, spec: FactoredSpec, tables: Sequence[np.ndarray]) -> "LocalPolicySet":
        """Broadcast tables over own states (or own states x actions) across the environment."""
        lifted = tuple(
            np.broadcast_to(np.asarray(t), (spec.env_state_size,) + np.shape(t)).copy()
            for t in tables
        )
        return cls(lifted)


def lift_policy(spec: FactoredSpec, policy: LocalPolicySet) -> StationaryPolicy:
    """Joint stationary policy assembled from the agents' local tables."""
    comps = spec.state_components
    env = spec.env_of_states()
    if policy.deterministic:
        actions = [
            policy.tables[i][env, comps[:, spec.agent_axis(i)]] for i in range(spec.m)
        ]
        return StationaryPolicy(np.ravel_multi_index(tuple(actions), spec.action_dims))

    joint = np.ones((spec.n_states, spec.n_actions))
    action_comps = spec.action_components
    for i in range(spec.m):
        probs = policy.probabilities(i, spec.agent_action_sizes[i])
        own = probs[env, comps[:, spec.agent_axis(i)]]
        joint *= own[:, action_comps[:, i]]
    return StationaryPolicy(joint)


def conditional_next_state(
    mdp: JointMDP,
    spec: FactoredSpec,
    i: int,
    s: int,
    a: int,
    s_minus_i_next: Sequence[int],
) -> np.ndarray:
    """
    Agent ``i``'s next-state distribution given the joint state and action and
    every other component's next state (environment first, then agents in
    order, agent ``i`` omitted).
    """
    axis = spec.agent_axis(i)
    if len(s_minus_i_next) != len(spec.state_dims) - 1:
        raise ShapeMismatch(
            f"expected {len(spec.state_dims) - 1} companion components, got {len(s_minus_i_next)}"
        )
    index: List[object] = [int(c) for c in s_minus_i_next]
    index.insert(axis, slice(None))
    row = mdp.kernel[s, a].reshape(spec.state_dims)
    masses = row[tuple(index)]
    total = masses.sum()
    if total <= ZERO_MASS:
        raise ZeroProbabilityConditioning(
            f"companion next state {tuple(s_minus_i_next)} has probability 0 from ({s}, {a})"
        )
    return masses / total


@dataclass(frozen=True)
class DeltaWitness:
    agent: int
    own_state: int
    own_action: int
    # (companion state, companion action, companion next state) joint indices
    context_a: Tuple[int, int, int]
    context_b: Tuple[int, int, int]


@dataclass(frozen=True)
class DeltaEstimate:
    value: float
    exhaustive: bool
    witness: Optional[DeltaWitness] = None
    n_samples: Optional[int] = None
    n_contexts: int = 0
    mode: str = "exhaustive"


def _agent_conditionals(mdp: JointMDP, spec: FactoredSpec, i: int) -> np.ndarray:
    """
    Agent ``i``'s next-state masses as ``(S_i, A_i, contexts, S_i)``.

    Contexts enumerate (companion state, companion action, companion next
    state) in that order, each a mixed-radix index over the other components.
    """
    ns, na = len(spec.state_dims), len(spec.action_dims)
    tensor = mdp.kernel.reshape(spec.state_dims + spec.action_dims + spec.state_dims)
    p = spec.agent_axis(i)
    others_s = [ax for ax in range(ns) if ax != p]
    others_a = [ns + j for j in range(na) if j != i]
    others_n = [ns + na + ax for ax in others_s]
    moved = tensor.transpose([p, ns + i] + others_s + others_a + others_n + [ns + na + p])
    n_own = spec.state_dims[p]
    return moved.reshape(n_own, spec.action_dims[i], -1, n_own)


def _context_shape(spec: FactoredSpec, i: int) -> Tuple[int, int, int]:
    companions = spec.n_states // spec.agent_state_sizes[i]
    return companions, spec.n_actions // spec.agent_action_sizes[i], companions


def _slice_max(rows: np.ndarray, context_ids: np.ndarray):
    """Largest pairwise TV among the conditionals in ``rows`` and its context pair."""
    masses = rows.sum(axis=1)
    keep = masses > ZERO_MASS
    if keep.sum() < 2:
        return 0.0, None, int(keep.sum())
    conditionals = rows[keep] / masses[keep, None]
    ids = context_ids[keep]
    _, first = np.unique(np.round(conditionals, 12), axis=0, return_index=True)
    first = np.sort(first)
    distinct = conditionals[first]
    if len(distinct) < 2:
        return 0.0, None, int(keep.sum())

    best, pair = -1.0, None
    block = max(1, (1 << 22) // (len(distinct) * distinct.shape[1]))
    for start in range(0, len(distinct), block):
        tv = 0.5 * np.abs(distinct[start:start + block, None, :] - distinct[None, :, :]).sum(axis=2)
        flat = int(np.argmax(tv))
        value = float(tv.flat[flat])
        if value > best:
            row, col = divmod(flat, tv.shape[1])
            best, pair = value, (int(ids[first[start + row]]), int(ids[first[col]]))
    return best, pair, int(keep.sum())


def measure_delta(
    mdp: JointMDP,
    spec: FactoredSpec,
    mode: str = "exhaustive",
    budget: int = DEFAULT_DELTA_BUDGET,
    seed: int = 0,
) -> DeltaEstimate:
    """
    Largest total-variation change in one agent's conditional next-state
    distribution across companion contexts.

    ``exhaustive`` compares every pair of positive-probability contexts for
    each (agent, own state, own action) and fails with BudgetExceeded when a
    slice has more than 4096 contexts or the total exceeds ``budget``.
    ``sampled`` draws ``budget`` distinct (agent, own state, own action,
    context) tuples, compares contexts within each slice and returns a lower
    bound; a budget covering every tuple enumerates them all. ``auto`` runs
    ``exhaustive`` when both limits allow it and ``sampled`` otherwise.
    """
    check_dimensions(spec, mdp)
    if mode not in ("exhaustive", "sampled", "auto"):
        raise ValueError(f"unknown delta mode {mode!r}")

    slice_sizes = [int(np.prod(_context_shape(spec, i))) for i in range(spec.m)]
    agent_totals = [
        spec.agent_state_sizes[i] * spec.agent_action_sizes[i] * slice_sizes[i]
        for i in range(spec.m)
    ]
    total = sum(agent_totals)
    if mode == "auto":
        fits = max(slice_sizes) <= EXHAUSTIVE_CONTEXT_LIMIT and total <= budget
        mode = "exhaustive" if fits else "sampled"
        logger.info("delta mode auto: %s (%d tuples, budget %d)", mode, total, budget)

    if mode == "exhaustive":
        widest = max(slice_sizes)
        if widest > EXHAUSTIVE_CONTEXT_LIMIT:
            raise BudgetExceeded(widest, EXHAUSTIVE_CONTEXT_LIMIT)
        if total > budget:
            raise BudgetExceeded(total, budget)
        chosen = np.arange(total)
        covered = True
    else:
        rng = np.random.default_rng(seed)
        covered = budget >= total
        chosen = np.arange(total) if covered else np.sort(rng.choice(total, size=budget, replace=False))

    best, witness, examined = 0.0, None, 0
    offset = 0
    for i in range(spec.m):
        mine = chosen[(chosen >= offset) & (chosen < offset + agent_totals[i])] - offset
        offset += agent_totals[i]
        if mine.size == 0:
            continue
        conditionals = _agent_conditionals(mdp, spec, i)
        n_ctx = slice_sizes[i]
        slice_ids, contexts = np.divmod(mine, n_ctx)
        boundaries = np.flatnonzero(np.diff(slice_ids)) + 1
        for group in np.split(np.arange(mine.size), boundaries):
            own_state, own_action = divmod(int(slice_ids[group[0]]), spec.agent_action_sizes[i])
            ids = contexts[group]
            value, pair, kept = _slice_max(conditionals[own_state, own_action, ids], ids)
            examined += kept
            if pair is not None and value > best:
                shape = _context_shape(spec, i)
                best = value
                witness = DeltaWitness(
                    agent=i,
                    own_state=own_state,
                    own_action=own_action,
                    context_a=tuple(int(c) for c in np.unravel_index(pair[0], shape)),
                    context_b=tuple(int(c) for c in np.unravel_index(pair[1], shape)),
                )
        del conditionals

    value = float(min(max(best, 0.0), 1.0))
    logger.info("delta %.12g (%s, %d contexts)", value, mode, examined)
    return DeltaEstimate(
        value=value,
        exhaustive=covered,
        witness=witness,
        n_samples=None if mode == "exhaustive" else int(chosen.size),
        n_contexts=examined,
        mode=mode,
    )


def build_ti_surrogate(
    spec: FactoredSpec,
    per_agent_kernels: Sequence[np.ndarray],
    reward: np.ndarray,
    initial_state: Optional[int] = None,
) -> JointMDP:
    """
    Product-kernel MDP from per-agent kernels ``(S_i, A_i, S_i)`` sharing the
    original reward.
    """
    if len(per_agent_kernels) != spec.m:
        raise ShapeMismatch(f"{len(per_agent_kernels)} kernels for {spec.m} agents")
    if spec.has_env and spec.env_kernel is None:
        raise ShapeMismatch("a surrogate with an environment component needs env_kernel")

    ns, na = len(spec.state_dims), len(spec.action_dims)
    shape = spec.state_dims + spec.action_dims + spec.state_dims
    kernel = np.ones(shape)
    if spec.has_env:
        env = np.asarray(spec.env_kernel, dtype=float)
        view = [1] * len(shape)
        view[0], view[ns + na] = env.shape
        kernel = kernel * (env / env.sum(axis=1, keepdims=True)).reshape(view)

    for i, local in enumerate(per_agent_kernels):
        local = np.asarray(local, dtype=float)
        p = spec.agent_axis(i)
        expected = (spec.state_dims[p], spec.action_dims[i], spec.state_dims[p])
        if local.shape != expected:
            raise ShapeMismatch(f"agent {i} kernel has shape {local.shape}, expected {expected}")
        sums = local.sum(axis=2)
        bad = np.argwhere(np.abs(sums - 1.0) > KERNEL_TOL)
        if bad.size:
            s, a = bad[0]
            raise NonStochasticRow(int(s), int(a), float(sums[s, a]))
        view = [1] * len(shape)
        view[p], view[ns + i], view[ns + na + p] = expected
        kernel = kernel * (local / sums[..., None]).reshape(view)

    surrogate = JointMDP(
        kernel.reshape(spec.n_states, spec.n_actions, spec.n_states),
        np.asarray(reward, dtype=float),
        initial_state,
    )
    validate_mdp(surrogate)
    return surrogate

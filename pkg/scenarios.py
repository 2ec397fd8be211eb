"""
Benchmark MMDPs: grid coverage robots, patrol units against adversaries, and
seeded random instances with tunable transition dependence.

Every builder returns a validated ``(JointMDP, FactoredSpec)`` pair.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from config import GridConfig, PatrolConfig, RandomConfig
from factored_mmdp import FactoredSpec, build_ti_surrogate, encode_joint
from mdp_core import JointMDP, validate_mdp

logger = logging.getLogger(__name__)

# Grid moves in action order: (d_row, d_col)
GRID_MOVES = ((0, -1), (-1, 0), (0, 1), (1, 0))
GRID_ACTION_NAMES = ("left", "down", "right", "up")


@dataclass(frozen=True, eq=False)
class CoverageModel:
    """
    Shared reward ``Σ_b w_b (1 − (1 − η)^{count_b})`` where ``count_b`` is the
    number of agents covering target ``b``; ``covers[i][s_i, a_i, b]`` says
    whether agent ``i`` covers ``b`` from that own state and action.
    """

    weights: np.ndarray
    eta: float
    covers: Tuple[np.ndarray, ...]

    @property
    def n_targets(self) -> int:
        return self.weights.shape[0]

    def value(self, counts) -> np.ndarray:
        counts = np.asarray(counts, dtype=float)
        return (self.weights * (1.0 - (1.0 - self.eta) ** counts)).sum(axis=-1)

    def expected_value(self, cover_probabilities: Sequence[np.ndarray]) -> float:
        """
        Expected reward when the listed agents cover each target independently
        with the given probabilities; agents not listed cover nothing.
        """
        miss = np.ones(self.n_targets)
        for p in cover_probabilities:
            miss *= 1.0 - self.eta * np.asarray(p, dtype=float)
        return float((self.weights * (1.0 - miss)).sum())

    def joint_reward(self, spec: FactoredSpec) -> np.ndarray:
        comps_s = spec.state_components
        comps_a = spec.action_components
        counts = np.zeros((spec.n_states, spec.n_actions, self.n_targets))
        for i, cover in enumerate(self.covers):
            own = comps_s[:, None, spec.agent_axis(i)]
            counts += cover[own, comps_a[None, :, i]]
        return self.value(counts)


# Grid coverage


def _grid_destinations(side: int) -> np.ndarray:
    """``(side², 4)`` table of destination cells, -1 where a move leaves the grid."""
    n_cells = side * side
    dest = np.full((n_cells, len(GRID_MOVES)), -1, dtype=int)
    for cell in range(n_cells):
        row, col = divmod(cell, side)
        for a, (d_row, d_col) in enumerate(GRID_MOVES):
            r, c = row + d_row, col + d_col
            if 0 <= r < side and 0 <= c < side:
                dest[cell, a] = r * side + c
    return dest


def grid_robot_row(config: GridConfig, cell: int, action: int, collided: bool) -> np.ndarray:
    """
    One robot's next-cell distribution.

    The intended neighbor gets ``c`` (``δ·c`` after a collision) and the other
    neighbors share the rest. An off-grid action has no intended cell; its mass
    is spread evenly over the valid neighbors.
    """
    n_cells = config.grid_side ** 2
    row = np.zeros(n_cells)
    if n_cells == 1:
        row[0] = 1.0
        return row

    dest = _grid_destinations(config.grid_side)[cell]
    neighbors = dest[dest >= 0]
    target = dest[action]
    if target < 0:
        row[neighbors] = 1.0 / len(neighbors)
        return row
    if len(neighbors) == 1:
        row[target] = 1.0
        return row

    hit = config.c * config.delta_scenario if collided else config.c
    row[neighbors] = (1.0 - hit) / (len(neighbors) - 1)
    row[target] = hit
    return row


def grid_coverage(config: GridConfig) -> CoverageModel:
    n_cells = config.grid_side ** 2
    on_target = (np.arange(n_cells)[:, None] == np.asarray(config.targets)[None, :]).astype(float)
    cover = np.broadcast_to(on_target[:, None, :], (n_cells, len(GRID_MOVES), len(config.targets)))
    return CoverageModel(np.ones(len(config.targets)), config.eta, (cover,) * config.n_robots)


def valid_action_count(config: GridConfig) -> int:
    """Joint actions that keep every robot on the grid from the start cells."""
    dest = _grid_destinations(config.grid_side)
    if config.grid_side == 1:
        return 1
    return int(np.prod([(dest[start] >= 0).sum() for start in config.starts]))


def build_grid(config: GridConfig) -> Tuple[JointMDP, FactoredSpec]:
    n_cells = config.grid_side ** 2
    n = config.n_robots
    spec = FactoredSpec((n_cells,) * n, (len(GRID_MOVES),) * n)
    comps_s, comps_a = spec.state_components, spec.action_components

    rows = np.empty((n_cells, len(GRID_MOVES), 2, n_cells))
    for cell in range(n_cells):
        for a in range(len(GRID_MOVES)):
            rows[cell, a, 0] = grid_robot_row(config, cell, a, False)
            rows[cell, a, 1] = grid_robot_row(config, cell, a, True)

    # collisions are counted on intended destinations
    intended = _grid_destinations(config.grid_side)[comps_s[:, None, :], comps_a[None, :, :]]
    valid = intended >= 0
    same = (intended[..., :, None] == intended[..., None, :]) & valid[..., :, None]
    collided = (same.sum(axis=-1) - valid) >= config.K

    kernel = np.ones((spec.n_states, spec.n_actions, 1))
    for i in range(n):
        own = rows[comps_s[:, None, i], comps_a[None, :, i], collided[..., i].astype(int)]
        kernel = (kernel[..., :, None] * own[..., None, :]).reshape(spec.n_states, spec.n_actions, -1)

    reward = grid_coverage(config).joint_reward(spec)
    mdp = JointMDP(kernel, reward, encode_joint(spec, config.starts))
    validate_mdp(mdp)
    logger.info(
        "built grid: %d robots on %dx%d, %d states, %d actions",
        n, config.grid_side, config.grid_side, spec.n_states, spec.n_actions,
    )
    return mdp, spec


# Patrolling


def _patrol_row(n_locations: int, aim: int, hit: float) -> np.ndarray:
    if n_locations == 1:
        return np.ones(1)
    row = np.full(n_locations, (1.0 - hit) / n_locations)
    row[aim] = hit
    return row / row.sum()


def patrol_unit_row(config: PatrolConfig, action: int, collided: bool) -> np.ndarray:
    hit = config.c * config.delta_scenario if collided else config.c
    return _patrol_row(config.n_locations, action, hit)


def patrol_adversary_row(config: PatrolConfig, target: int, covered: bool) -> np.ndarray:
    hit = config.beta * config.d if covered else config.d
    return _patrol_row(config.n_locations, target, hit)


def patrol_row_corrections(config: PatrolConfig) -> Dict[str, float]:
    """Factor each row family is multiplied by to sum to one."""
    n = config.n_locations

    def factor(hit: float) -> float:
        if n == 1:
            return 1.0
        return 1.0 / (hit + (n - 1) * (1.0 - hit) / n)

    return {
        "unit": factor(config.c),
        "unit_collided": factor(config.c * config.delta_scenario),
        "adversary": factor(config.d),
        "adversary_covered": factor(config.beta * config.d),
    }


def _adversary_aims(config: PatrolConfig) -> np.ndarray:
    """``(n_adversaries, n_locations)`` distribution of each adversary's target."""
    if config.adversary_policy is not None:
        aims = np.asarray(config.adversary_policy, dtype=float)
        return aims / aims.sum(axis=1, keepdims=True)
    targets = config.adversary_targets
    if targets is None:
        targets = [j % config.n_locations for j in range(config.n_adversaries)]
    return np.eye(config.n_locations)[targets]


def build_patrol(config: PatrolConfig) -> Tuple[JointMDP, FactoredSpec]:
    n_loc = config.n_locations
    n_units, n_adv = config.n_units, config.n_adversaries
    spec = FactoredSpec((n_loc,) * (n_units + n_adv), (n_loc,) * n_units + (1,) * n_adv)
    aims = _adversary_aims(config)
    corrections = patrol_row_corrections(config)
    logger.info("patrol row normalization factors: %s", corrections)

    unit_actions = spec.action_components[:, :n_units]
    next_rows = np.ones((spec.n_actions, 1))
    for i in range(n_units):
        mine = unit_actions[:, i]
        collided = (unit_actions == mine[:, None]).sum(axis=1) > 1
        rows = np.stack([patrol_unit_row(config, a, hit) for a, hit in zip(mine, collided)])
        next_rows = (next_rows[:, :, None] * rows[:, None, :]).reshape(spec.n_actions, -1)
    for j in range(n_adv):
        rows = np.zeros((spec.n_actions, n_loc))
        for k, actions in enumerate(unit_actions):
            for target in np.flatnonzero(aims[j]):
                covered = bool((actions == target).any())
                rows[k] += aims[j, target] * patrol_adversary_row(config, target, covered)
        next_rows = (next_rows[:, :, None] * rows[:, None, :]).reshape(spec.n_actions, -1)

    # r(s') = Σ_l (1 − (1 − η)^{units at l}) · (adversaries at l)
    positions = spec.state_components
    locations = np.arange(n_loc)
    units_at = (positions[:, :n_units, None] == locations).sum(axis=1)
    adversaries_at = (positions[:, n_units:, None] == locations).sum(axis=1)
    capture = ((1.0 - (1.0 - config.eta) ** units_at) * adversaries_at).sum(axis=1)

    # the kernel does not depend on the current state
    kernel = np.broadcast_to(next_rows[None], (spec.n_states,) + next_rows.shape).copy()
    reward = np.broadcast_to(next_rows @ capture, (spec.n_states, spec.n_actions)).copy()
    mdp = JointMDP(kernel, reward)
    validate_mdp(mdp)
    logger.info(
        "built patrol: %d units, %d adversaries, %d locations, %d states, %d actions",
        n_units, n_adv, n_loc, spec.n_states, spec.n_actions,
    )
    return mdp, spec


# Random instances


@dataclass(frozen=True, eq=False)
class RandomInstance:
    mdp: JointMDP
    spec: FactoredSpec
    agent_kernels: Tuple[np.ndarray, ...]
    coverage: Optional[CoverageModel] = None


def random_instance(config: RandomConfig) -> RandomInstance:
    """
    Seeded instance with kernel ``(1 − κ)·⊗P_i + κ·D``.

    Per-agent kernels and the dependent part ``D`` have Dirichlet rows, so
    every policy induces an ergodic chain; ``κ = 0`` gives a TI instance.
    """
    rng = np.random.default_rng(config.seed)
    spec = FactoredSpec(tuple(config.agent_state_sizes), tuple(config.agent_action_sizes))
    agent_kernels = tuple(
        rng.dirichlet(np.ones(n_s), size=(n_s, n_a))
        for n_s, n_a in zip(spec.agent_state_sizes, spec.agent_action_sizes)
    )
    dependent = rng.dirichlet(np.ones(spec.n_states), size=(spec.n_states, spec.n_actions))
    product = build_ti_surrogate(spec, agent_kernels, np.zeros((spec.n_states, spec.n_actions)))
    kernel = (1.0 - config.dependence) * product.kernel + config.dependence * dependent
    kernel /= kernel.sum(axis=2, keepdims=True)

    coverage = None
    if config.reward_model == "coverage":
        weights = rng.uniform(0.1, 1.0, size=config.n_targets)
        covers = tuple(
            (rng.random((n_s, n_a, config.n_targets)) < config.cover_probability).astype(float)
            for n_s, n_a in zip(spec.agent_state_sizes, spec.agent_action_sizes)
        )
        coverage = CoverageModel(weights, config.eta, covers)
        reward = coverage.joint_reward(spec)
    else:
        reward = rng.uniform(0.0, 1.0, size=(spec.n_states, spec.n_actions))

    mdp = JointMDP(kernel, reward)
    validate_mdp(mdp)
    return RandomInstance(mdp, spec, agent_kernels, coverage)


def build_random(config: RandomConfig) -> Tuple[JointMDP, FactoredSpec]:
    instance = random_instance(config)
    return instance.mdp, instance.spec


def random_coverage_model(config: RandomConfig) -> Optional[CoverageModel]:
    return random_instance(config).coverage


BUILDERS = {"grid": build_grid, "patrol": build_patrol, "random": build_random}


def build_scenario(config) -> Tuple[JointMDP, FactoredSpec]:
    return BUILDERS[config.kind](config)


def scenario_sizes(config) -> Dict[str, int]:
    """State and action counts without building the kernel."""
    if config.kind == "grid":
        raw = 4 ** config.n_robots
        return {
            "n_states": (config.grid_side ** 2) ** config.n_robots,
            "n_actions": raw,
            "n_valid_actions": valid_action_count(config),
        }
    if config.kind == "patrol":
        n_agents = config.n_units + config.n_adversaries
        return {
            "n_states": config.n_locations ** n_agents,
            "n_actions": config.n_locations ** config.n_units,
        }
    return {
        "n_states": int(np.prod(config.agent_state_sizes)),
        "n_actions": int(np.prod(config.agent_action_sizes)),
    }

"""
Ground-truth baselines: the optimal joint policy and exhaustive search over
local policy tuples.
"""

import itertools
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from errors import CapExceeded, NotErgodic, ShapeMismatch, SingularSystem
from factored_mmdp import FactoredSpec, LocalPolicySet, check_dimensions
from local_search import evaluate_on_joint, local_chain
from markov_analysis import stationary_distribution
from mdp_core import (
    DEFAULT_APERIODICITY,
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    GainBias,
    JointMDP,
    StationaryPolicy,
    relative_value_iteration,
)
from scenarios import CoverageModel

logger = logging.getLogger(__name__)

DEFAULT_CAP = 1_000_000
SLACK_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class OracleResult:
    policy: LocalPolicySet
    value: float
    n_evaluated: int
    n_skipped: int
    runtime_s: float = 0.0


@dataclass(frozen=True)
class SubmodularityReport:
    checks: int
    violations: int
    worst_slack: float
    monotone_violations: int = 0

    @property
    def ok(self) -> bool:
        return self.violations == 0 and self.monotone_violations == 0


def global_baseline(
    mdp: JointMDP,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    aperiodicity: float = DEFAULT_APERIODICITY,
) -> GainBias:
    """Best gain over all joint stationary policies."""
    started = time.perf_counter()
    result = relative_value_iteration(mdp, tol=tol, max_iter=max_iter, aperiodicity=aperiodicity)
    logger.info(
        "global baseline gain %.12g in %d sweeps (%.3fs)",
        result.gain, result.iterations, time.perf_counter() - started,
    )
    return result


def _table_counts(spec: FactoredSpec) -> Tuple[int, ...]:
    cells = [spec.env_state_size * n for n in spec.agent_state_sizes]
    return tuple(a ** c for a, c in zip(spec.agent_action_sizes, cells))


def _policy_tuple(spec: FactoredSpec, index: int) -> LocalPolicySet:
    """Decode a flat tuple index; agent 0 and each table's first cell are most significant."""
    counts = _table_counts(spec)
    per_agent = np.unravel_index(index, counts)
    tables = []
    for i, k in enumerate(per_agent):
        shape = (spec.env_state_size, spec.agent_state_sizes[i])
        digits = np.unravel_index(int(k), (spec.agent_action_sizes[i],) * (shape[0] * shape[1]))
        tables.append(np.array(digits, dtype=int).reshape(shape))
    return LocalPolicySet(tuple(tables))


def _scan(mdp: JointMDP, spec: FactoredSpec, start: int, stop: int):
    best_value, best_index = -np.inf, None
    evaluated = skipped = 0
    for index in range(start, stop):
        try:
            value = evaluate_on_joint(mdp, spec, _policy_tuple(spec, index))
        except (NotErgodic, SingularSystem):
            skipped += 1
            continue
        evaluated += 1
        if value > best_value:
            best_value, best_index = value, index
    return best_value, best_index, evaluated, skipped


def brute_force_local(
    mdp: JointMDP, spec: FactoredSpec, cap: int = DEFAULT_CAP, jobs: int = 1
) -> OracleResult:
    """
    Evaluate every deterministic local policy tuple and return the best.

    Tuples whose chain has several recurrent classes are skipped and counted.
    Ties go to the lowest tuple index, also when the scan is sharded.
    """
    check_dimensions(spec, mdp)
    total = int(np.prod(_table_counts(spec), dtype=object))
    if total > cap:
        raise CapExceeded(total, cap)

    started = time.perf_counter()
    jobs = max(1, min(jobs, total))
    bounds = np.linspace(0, total, jobs + 1).astype(int)
    if jobs == 1:
        shards = [_scan(mdp, spec, 0, total)]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_scan, mdp, spec, lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]
            shards = [f.result() for f in futures]

    best_value, best_index = -np.inf, None
    evaluated = skipped = 0
    for value, index, n_eval, n_skip in shards:
        evaluated += n_eval
        skipped += n_skip
        if index is not None and value > best_value:
            best_value, best_index = value, index
    if best_index is None:
        raise NotErgodic(f"none of the {total} local policy tuples induces a single recurrent class")
    if skipped:
        logger.info("brute force skipped %d of %d tuples", skipped, total)
    return OracleResult(
        _policy_tuple(spec, best_index), float(best_value), evaluated, skipped,
        time.perf_counter() - started,
    )


def _cover_probabilities(kernel: np.ndarray, cover: np.ndarray, cap: int):
    """Per deterministic policy of one agent, the stationary probability of covering each target."""
    n_states, n_actions = kernel.shape[:2]
    if n_actions ** n_states > cap:
        raise CapExceeded(n_actions ** n_states, cap)
    probabilities = []
    for actions in itertools.product(range(n_actions), repeat=n_states):
        actions = np.array(actions)
        probs = StationaryPolicy(actions).as_matrix(n_actions)
        try:
            q = stationary_distribution(local_chain(kernel, probs)).probs
        except NotErgodic:
            continue
        probabilities.append(q @ cover[np.arange(n_states), actions])
    return probabilities


def check_submodularity(
    spec: FactoredSpec,
    local_kernels: Sequence[np.ndarray],
    coverage: CoverageModel,
    cap: int = 4096,
) -> SubmodularityReport:
    """
    Exchange-inequality check of the coverage objective over policy sets with
    at most one policy per agent.

    For every pair of independent sets ``X ⊆ Y`` and every policy ``e`` of an
    agent absent from ``Y``, the gain of adding ``e`` to ``X`` must be at least
    the gain of adding it to ``Y``. Agents outside a set cover nothing.
    """
    if spec.has_env:
        raise ShapeMismatch("submodularity check needs a spec without an environment component")
    options = [
        _cover_probabilities(np.asarray(k), np.asarray(c), cap)
        for k, c in zip(local_kernels, coverage.covers)
    ]

    def value(assignment) -> float:
        return coverage.expected_value(
            [options[i][k] for i, k in enumerate(assignment) if k is not None]
        )

    checks = violations = monotone_violations = 0
    worst = np.inf
    choices = [[None] + list(range(len(o))) for o in options]
    for larger in itertools.product(*choices):
        present = [i for i, k in enumerate(larger) if k is not None]
        absent = [i for i, k in enumerate(larger) if k is None]
        f_larger = value(larger)
        for kept in itertools.product((False, True), repeat=len(present)):
            smaller = list(larger)
            for agent, keep in zip(present, kept):
                if not keep:
                    smaller[agent] = None
            f_smaller = value(smaller)
            if f_smaller > f_larger + SLACK_TOL:
                monotone_violations += 1
            for agent in absent:
                for k in range(len(options[agent])):
                    grown_small = list(smaller)
                    grown_small[agent] = k
                    grown_large = list(larger)
                    grown_large[agent] = k
                    slack = (value(grown_small) - f_smaller) - (value(grown_large) - f_larger)
                    checks += 1
                    worst = min(worst, slack)
                    if slack < -SLACK_TOL:
                        violations += 1
    if violations:
        logger.warning("submodularity: %d of %d exchange checks failed", violations, checks)
    return SubmodularityReport(checks, violations, float(worst) if checks else 0.0, monotone_violations)


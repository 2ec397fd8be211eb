r"""Stationary distributions and sensitivity measures for finite Markov chains.

Chains are dense ``(n, n)`` numpy arrays throughout. Class structure comes
from the support graph (``scipy.sparse.csgraph``), stationary vectors from an
exact linear solve, and the perturbation machinery (ergodicity coefficient,
group inverse, perturbation bound) from dense linear algebra.
"""

import itertools
import logging
from dataclasses import dataclass
from math import gcd
from typing import Optional, Tuple

import numpy as np
import scipy.linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order, connected_components, shortest_path

from errors import (
    AllSampledPoliciesNonErgodic,
    IdentityCheckFailed,
    LengthMismatch,
    NegativeProbability,
    NonStochasticRow,
    NotADistribution,
    NotErgodic,
    NotSquare,
    SingularSystem,
)

logger = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12
RESIDUAL_TOL = 1e-10
DISTRIBUTION_TOL = 1e-9
IDENTITY_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class StationaryDistribution:
    probs: np.ndarray
    method: str = "exact"

    def __len__(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True, eq=False)
class ChainStructure:
    """Communicating-class structure of a chain's support graph."""

    n_components: int
    recurrent_classes: Tuple[np.ndarray, ...]
    periods: Tuple[int, ...]

    @property
    def irreducible(self) -> bool:
        return self.n_components == 1

    @property
    def unichain(self) -> bool:
        return len(self.recurrent_classes) == 1

    @property
    def period(self) -> Optional[int]:
        return self.periods[0] if self.unichain else None

    @property
    def aperiodic(self) -> bool:
        return all(p == 1 for p in self.periods)

    @property
    def ergodic(self) -> bool:
        return self.irreducible and self.aperiodic


@dataclass(frozen=True)
class ErgodicityReport:
    lambda1_of_P: float
    group_inverse_lambda1: float
    lambda_bar_estimate: float
    n_policies_sampled: int
    n_skipped: int = 0
    kind: str = "sampled"


def _as_square(P) -> np.ndarray:
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise NotSquare(P.shape)
    return P


def check_stochastic(P, tol: float = ROW_SUM_TOL) -> np.ndarray:
    """Validate a row-stochastic matrix and return it as a float array."""
    P = _as_square(P)
    negative = np.argwhere(P < 0)
    if negative.size:
        i, j = negative[0]
        raise NegativeProbability(int(i), None, int(j), float(P[i, j]))
    sums = P.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        raise NonStochasticRow(int(bad[0]), None, float(sums[bad[0]]))
    return P


def _support_graph(P: np.ndarray) -> csr_matrix:
    return csr_matrix((P > 0).astype(np.int8))


def _class_period(graph: csr_matrix, members: np.ndarray) -> int:
    sub = graph[members][:, members]
    levels = shortest_path(sub, directed=True, unweighted=True, indices=0)
    rows, cols = sub.nonzero()
    lengths = np.abs(levels[rows] + 1 - levels[cols]).astype(np.int64)
    period = 0
    for value in np.unique(lengths):
        period = gcd(period, int(value))
    return period or 1


def ergodicity_check(chain) -> ChainStructure:
    """
    Find the recurrent classes of a chain and their periods.

    A class is recurrent when no edge of the support graph leaves it; the
    period of a class is the gcd of ``level(u) + 1 - level(v)`` over its edges,
    with levels taken from a breadth-first search inside the class.
    """
    P = _as_square(chain)
    graph = _support_graph(P)
    n_components, labels = connected_components(graph, directed=True, connection="strong")
    rows, cols = graph.nonzero()
    leaving = labels[rows] != labels[cols]
    open_labels = set(np.unique(labels[rows[leaving]]).tolist())
    recurrent = tuple(
        np.flatnonzero(labels == c) for c in range(n_components) if c not in open_labels
    )
    periods = tuple(_class_period(graph, members) for members in recurrent)
    return ChainStructure(n_components, recurrent, periods)


def closed_class_from(chain, start: int) -> np.ndarray:
    """Sorted indices of the states reachable from ``start`` (a closed set)."""
    P = _as_square(chain)
    order = breadth_first_order(_support_graph(P), start, directed=True, return_predecessors=False)
    return np.sort(order)


def stationary_distribution(chain) -> StationaryDistribution:
    r"""Stationary vector of a chain with a single recurrent class.

    Solves :math:`q (P - I) = 0` with the last equation replaced by the
    normalization :math:`\sum_i q_i = 1`.

    Parameters
    ----------
    chain : (n, n) ndarray
        Row-stochastic transition matrix.

    Returns
    -------
    StationaryDistribution
        Probabilities, zero on transient states.

    Raises
    ------
    NotErgodic
        If the chain has more than one recurrent class.
    SingularSystem
        If the solve fails or its residual exceeds ``1e-10``.
    """
    P = _as_square(chain)
    structure = ergodicity_check(P)
    if not structure.unichain:
        raise NotErgodic(f"chain has {len(structure.recurrent_classes)} recurrent classes")
    if not structure.aperiodic:
        logger.debug("stationary solve on a chain with period %s", structure.period)

    n = P.shape[0]
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    b = np.zeros(n)
    b[-1] = 1.0
    try:
        q = scipy.linalg.solve(A, b)
    except (scipy.linalg.LinAlgError, ValueError) as e:
        raise SingularSystem(f"stationary solve failed: {e}")

    if q.min() < -RESIDUAL_TOL:
        raise SingularSystem(f"stationary solve produced entry {q.min():.3e}")
    q = np.clip(q, 0.0, None)
    q /= q.sum()
    residual = np.abs(q @ P - q).max()
    if residual > RESIDUAL_TOL:
        raise SingularSystem(f"stationary residual {residual:.3e} exceeds {RESIDUAL_TOL}")
    return StationaryDistribution(q)


def simulate_stationary_distribution(
    chain, n_steps: int, restart_every: Optional[int] = None, seed: int = 0
) -> StationaryDistribution:
    """
    Estimate the stationary vector from visit frequencies of one trajectory.

    The walk restarts from a uniformly drawn state every ``restart_every``
    steps when given.
    """
    P = check_stochastic(chain, tol=DISTRIBUTION_TOL)
    n = P.shape[0]
    rng = np.random.default_rng(seed)
    cumulative = np.cumsum(P, axis=1)
    draws = rng.random(n_steps)
    counts = np.zeros(n)
    state = int(rng.integers(n))
    for t in range(n_steps):
        if restart_every and t and t % restart_every == 0:
            state = int(rng.integers(n))
        counts[state] += 1
        state = min(int(np.searchsorted(cumulative[state], draws[t], side="right")), n - 1)
    return StationaryDistribution(counts / n_steps, method="monte_carlo")


def total_variation(mu, nu) -> float:
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if mu.shape != nu.shape:
        raise LengthMismatch(mu.size, nu.size)
    for name, vec in (("mu", mu), ("nu", nu)):
        if vec.min(initial=0.0) < -DISTRIBUTION_TOL or abs(vec.sum() - 1.0) > DISTRIBUTION_TOL:
            raise NotADistribution(f"{name} is not a probability vector (sum {vec.sum()!r})")
    return float(0.5 * np.abs(mu - nu).sum())


def ergodicity_coefficient(P) -> float:
    r"""Half the largest L1 distance between two rows of a square matrix.

    Works on any real square matrix, including group inverses. Rows are
    compared block-wise so memory stays quadratic in ``n``.
    """
    P = _as_square(P)
    n = P.shape[0]
    block = max(1, (1 << 22) // max(1, n * n))
    best = 0.0
    for start in range(0, n, block):
        diff = np.abs(P[start:start + block, None, :] - P[None, :, :]).sum(axis=2)
        best = max(best, float(diff.max()))
    return 0.5 * best


def group_inverse_Z(P, q: StationaryDistribution, check_tol: float = IDENTITY_TOL) -> np.ndarray:
    r"""Group inverse of :math:`Z = I - P`.

    Computed as :math:`(I - P + \mathbf{1} q^T)^{-1} - \mathbf{1} q^T` and
    checked against the three defining identities.

    Parameters
    ----------
    P : (n, n) ndarray
        Row-stochastic matrix.
    q : StationaryDistribution
        Stationary distribution of ``P``.
    check_tol : float
        Largest entrywise residual accepted for the identities.

    Returns
    -------
    (n, n) ndarray
    """
    P = _as_square(P)
    n = P.shape[0]
    probs = q.probs if isinstance(q, StationaryDistribution) else np.asarray(q, dtype=float)
    if probs.shape != (n,):
        raise LengthMismatch(n, probs.size)
    Q = np.tile(probs, (n, 1))
    Z = np.eye(n) - P
    try:
        Zs = scipy.linalg.inv(Z + Q) - Q
    except (scipy.linalg.LinAlgError, ValueError) as e:
        raise SingularSystem(f"I - P + 1q^T is singular: {e}")

    residual = max(
        np.abs(Z @ Zs @ Z - Z).max(),
        np.abs(Zs @ Z @ Zs - Zs).max(),
        np.abs(Zs @ Z - Z @ Zs).max(),
    )
    if residual > check_tol:
        raise IdentityCheckFailed(float(residual))
    return Zs


def perturbation_gap_bound(P, P_prime) -> Tuple[float, float]:
    """
    Bound the total variation between two chains' stationary vectors.

    Returns ``(bound, actual)`` with ``bound = ½·Λ₁(Z#(P))·‖P − P'‖`` where the
    norm is the maximum absolute row sum.
    """
    P = check_stochastic(P, tol=DISTRIBUTION_TOL)
    P_prime = check_stochastic(P_prime, tol=DISTRIBUTION_TOL)
    if P.shape != P_prime.shape:
        raise LengthMismatch(P.shape[0], P_prime.shape[0])
    q = stationary_distribution(P)
    q_prime = stationary_distribution(P_prime)
    Zs = group_inverse_Z(P, q)
    norm = float(np.abs(P - P_prime).sum(axis=1).max())
    bound = 0.5 * ergodicity_coefficient(Zs) * norm
    actual = total_variation(q.probs, q_prime.probs)
    return bound, actual


def policy_chain(kernel: np.ndarray, actions: np.ndarray, initial_state: Optional[int] = None):
    """
    Chain of a deterministic action table, restricted to the closed set
    reachable from ``initial_state`` when one is given.
    """
    n_states = kernel.shape[0]
    chain = kernel[np.arange(n_states), actions, :]
    if initial_state is None:
        return chain, np.arange(n_states)
    states = closed_class_from(chain, initial_state)
    return chain[np.ix_(states, states)], states


def estimate_lambda_bar(mdp, n_samples: int, seed: int) -> ErgodicityReport:
    """
    Largest Λ₁(Z#) over deterministic policies of ``mdp``.

    Policies are drawn uniformly with a seeded generator; when ``n_samples``
    covers the whole policy space every policy is enumerated instead and the
    report is tagged ``exhaustive``. Policies whose chain has several
    recurrent classes are skipped and counted.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    n_states, n_actions = mdp.reward.shape
    exhaustive = n_actions ** n_states <= n_samples
    if exhaustive:
        policies = (np.array(p) for p in itertools.product(range(n_actions), repeat=n_states))
        total = n_actions ** n_states
    else:
        rng = np.random.default_rng(seed)
        policies = (rng.integers(0, n_actions, size=n_states) for _ in range(n_samples))
        total = n_samples

    best = None
    skipped = 0
    initial_state = getattr(mdp, "initial_state", None)
    for actions in policies:
        chain, _ = policy_chain(mdp.kernel, actions, initial_state)
        try:
            q = stationary_distribution(chain)
            lam = ergodicity_coefficient(group_inverse_Z(chain, q))
        except (NotErgodic, SingularSystem, IdentityCheckFailed) as e:
            logger.debug("skipping policy: %s", e)
            skipped += 1
            continue
        if best is None or lam > best[1]:
            best = (ergodicity_coefficient(chain), lam)

    if best is None:
        raise AllSampledPoliciesNonErgodic(total)
    logger.info("lambda_bar estimate %.6g from %d policies (%d skipped)", best[1], total, skipped)
    return ErgodicityReport(
        lambda1_of_P=best[0],
        group_inverse_lambda1=best[1],
        lambda_bar_estimate=best[1],
        n_policies_sampled=total,
        n_skipped=skipped,
        kind="exhaustive" if exhaustive else "sampled",
    )

"""
Tests for the global baseline, the local-tuple brute force and the
submodularity spot check.
"""

import itertools

import numpy as np
import pytest

from errors import CapExceeded, ShapeMismatch
from factored_mmdp import FactoredSpec, LocalPolicySet
from local_search import evaluate_on_joint, run_algorithm1
from oracle import brute_force_local, check_submodularity, global_baseline
from scenarios import CoverageModel, random_instance


def test_single_agent_brute_force_matches_baseline(rng, make_mdp):
    mdp = make_mdp(rng, 3, 2)
    spec = FactoredSpec((3,), (2,))
    result = brute_force_local(mdp, spec)
    assert result.n_evaluated + result.n_skipped == 8
    assert result.value == pytest.approx(global_baseline(mdp).gain, abs=1e-8)


def test_brute_force_enumerates_every_tuple(make_random):
    instance = random_instance(make_random(1, dependence=0.3))
    mdp, spec = instance.mdp, instance.spec
    result = brute_force_local(mdp, spec)
    assert result.n_evaluated + result.n_skipped == 16

    values = [
        evaluate_on_joint(mdp, spec, LocalPolicySet.from_local(spec, [np.array(t0), np.array(t1)]))
        for t0, t1 in itertools.product(itertools.product(range(2), repeat=2), repeat=2)
    ]
    assert result.value == pytest.approx(max(values), abs=1e-12)
    assert evaluate_on_joint(mdp, spec, result.policy) == pytest.approx(result.value)


def test_brute_force_dominates_local_search_and_random_tuples(rng, make_random):
    for seed in range(5):
        instance = random_instance(make_random(seed, states=(2, 3), actions=(2, 2), dependence=0.2))
        mdp, spec = instance.mdp, instance.spec
        best = brute_force_local(mdp, spec).value
        trace = run_algorithm1(mdp, spec)
        if trace.converged:
            assert best >= evaluate_on_joint(mdp, spec, trace.policy) - 1e-9
        for _ in range(50):
            tables = [rng.integers(0, a, size=s) for s, a in zip(spec.agent_state_sizes, spec.agent_action_sizes)]
            assert best >= evaluate_on_joint(mdp, spec, LocalPolicySet.from_local(spec, tables)) - 1e-12
        assert global_baseline(mdp).gain >= best - 1e-8


def test_brute_force_cap(make_random):
    instance = random_instance(make_random(2, states=(3, 3), actions=(2, 2)))
    with pytest.raises(CapExceeded) as info:
        brute_force_local(instance.mdp, instance.spec, cap=10)
    assert info.value.count == 64


def test_sharded_scan_gives_the_same_answer(make_random):
    instance = random_instance(make_random(7, states=(2, 3), actions=(2, 2), dependence=0.3))
    single = brute_force_local(instance.mdp, instance.spec, jobs=1)
    sharded = brute_force_local(instance.mdp, instance.spec, jobs=4)
    assert sharded.value == single.value
    assert sharded.n_evaluated == single.n_evaluated
    for a, b in zip(single.policy.tables, sharded.policy.tables):
        np.testing.assert_array_equal(a, b)


def test_coverage_objective_is_submodular(make_random):
    for seed in range(3):
        instance = random_instance(make_random(seed))
        report = check_submodularity(instance.spec, instance.agent_kernels, instance.coverage)
        assert report.checks > 0
        assert report.ok
        assert report.worst_slack >= -1e-12


def test_submodularity_needs_agents_only():
    spec = FactoredSpec((2,), (2,), env_state_size=2)
    coverage = CoverageModel(np.ones(1), 0.5, (np.zeros((2, 2, 1)),))
    with pytest.raises(ShapeMismatch):
        check_submodularity(spec, [np.full((2, 2, 2), 0.5)], coverage)

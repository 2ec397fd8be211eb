"""
Tests for the optimality-gap report and its inequalities on small instances.
"""

import numpy as np
import pytest

from bounds import compute_bound_report, verify_lemma4
from config import SearchConfig
from factored_mmdp import FactoredSpec, LocalPolicySet, build_ti_surrogate, measure_delta
from local_search import run_algorithm1
from markov_analysis import ErgodicityReport, estimate_lambda_bar
from oracle import brute_force_local
from scenarios import random_instance


def searched(instance, config=None):
    trace = run_algorithm1(instance.mdp, instance.spec, config)
    surrogate = build_ti_surrogate(instance.spec, trace.local_kernels, instance.mdp.reward)
    return trace, surrogate


def test_report_arithmetic(make_random):
    instance = random_instance(make_random(3, states=(2, 3), actions=(2, 2), dependence=0.3))
    config = SearchConfig(epsilon=0.05)
    trace, surrogate = searched(instance, config)
    report = compute_bound_report(trace, instance.mdp, surrogate, instance.spec, 0.2, 1.5, config)

    carried = (1 + 2 * 0.05) * report.j_hat_on_surrogate + report.j_hat_on_original
    assert report.theorem2_rhs == pytest.approx(4 * report.r_max * 1.5 * 2 * 0.2 + carried, rel=1e-12)
    assert report.theorem2_rhs_range_variant == pytest.approx(
        4 * (report.r_max - report.r_min) * 1.5 * 2 * 0.2 + carried, rel=1e-12
    )
    assert report.lemma4_gap_bound == pytest.approx((report.r_max - report.r_min) * 2 * 1.5 * 2 * 0.2)
    assert report.lemma2_factor == pytest.approx(1 / (2 + 0.05 * 2))
    assert report.measured_gap == pytest.approx(abs(report.j_hat_on_surrogate - report.j_hat_on_original))
    assert report.lambda_bar_kind == "per_policy_exact"
    assert report.j_star is None and report.theorem2_holds is None
    assert report.as_dict()["m"] == 2


def test_report_takes_measured_inputs(make_random):
    instance = random_instance(make_random(4, states=(2, 2), actions=(2, 2), dependence=0.2))
    trace, surrogate = searched(instance)
    delta = measure_delta(instance.mdp, instance.spec)
    lam = ErgodicityReport(0.5, 2.0, 2.0, 10, kind="sampled")
    report = compute_bound_report(trace, instance.mdp, surrogate, instance.spec, delta, lam, j_star=0.0)
    assert report.delta == delta.value
    assert report.delta_exhaustive
    assert report.lambda_bar == 2.0 and report.lambda_bar_kind == "sampled"
    assert report.theorem2_holds


def test_transition_independent_case_collapses(make_random):
    instance = random_instance(make_random(5, states=(3, 2), actions=(2, 2)))
    trace, surrogate = searched(instance)
    delta = measure_delta(instance.mdp, instance.spec)
    report = compute_bound_report(trace, instance.mdp, surrogate, instance.spec, delta, 3.0)
    assert report.delta == pytest.approx(0.0, abs=1e-12)
    assert report.j_hat_on_surrogate == pytest.approx(report.j_hat_on_original, abs=1e-10)
    assert report.theorem2_rhs == pytest.approx(report.j_hat_on_surrogate + report.j_hat_on_original, abs=1e-9)
    assert report.lemma4_ok


def test_gap_bound_on_surrogate_itself(make_random):
    instance = random_instance(make_random(6, states=(2, 2), actions=(2, 2), dependence=0.4))
    trace, surrogate = searched(instance)
    check = verify_lemma4(surrogate, surrogate, instance.spec, trace.policy, delta=0.0)
    assert check.gap == 0.0
    assert check.ok


def test_gap_bound_on_random_dependent_instances(rng, make_random):
    """The stationary reward gap stays below (R_max − R_min)·2·λ·m·δ."""
    for seed in range(15):
        dependence = float(rng.uniform(0.05, 0.5))
        instance = random_instance(make_random(200 + seed, states=(2, 3), actions=(2, 2), dependence=dependence))
        mdp, spec = instance.mdp, instance.spec
        trace, surrogate = searched(instance)
        delta = measure_delta(mdp, spec).value
        policies = [trace.policy, LocalPolicySet.uniform(spec)]
        for _ in range(3):
            tables = [rng.integers(0, a, size=s) for s, a in zip(spec.agent_state_sizes, spec.agent_action_sizes)]
            policies.append(LocalPolicySet.from_local(spec, tables))
        for policy in policies:
            check = verify_lemma4(mdp, surrogate, spec, policy, delta)
            assert check.ok, (seed, check)


def test_local_optimum_reaches_half_of_surrogate_optimum(make_random):
    converged = 0
    for seed in range(20):
        instance = random_instance(make_random(300 + seed, states=(2, 2), actions=(2, 2)))
        trace, surrogate = searched(instance)
        if not trace.converged:
            continue
        converged += 1
        best = brute_force_local(surrogate, instance.spec).value
        report = compute_bound_report(trace, instance.mdp, surrogate, instance.spec, 0.0, 0.0)
        assert report.j_hat_on_surrogate >= report.lemma2_factor * best - 1e-6
    assert converged > 0


def test_additive_bound_covers_the_local_optimum(make_random):
    converged = 0
    for seed in range(20):
        instance = random_instance(make_random(400 + seed, states=(2, 2), actions=(2, 2), dependence=0.2))
        mdp, spec = instance.mdp, instance.spec
        trace, surrogate = searched(instance)
        if not trace.converged:
            continue
        converged += 1
        delta = measure_delta(mdp, spec)
        lam = estimate_lambda_bar(mdp, n_samples=500, seed=0)
        assert lam.kind == "exhaustive"
        j_star = brute_force_local(mdp, spec).value
        report = compute_bound_report(trace, mdp, surrogate, spec, delta, lam, j_star=j_star)
        assert report.theorem2_holds
        assert report.lemma4_ok
    assert converged > 0


def test_single_agent_has_no_gap(rng, make_mdp):
    mdp = make_mdp(rng, 5, 3)
    spec = FactoredSpec((5,), (3,))
    trace = run_algorithm1(mdp, spec)
    surrogate = build_ti_surrogate(spec, trace.local_kernels, mdp.reward)
    np.testing.assert_allclose(surrogate.kernel, mdp.kernel, atol=1e-12)
    report = compute_bound_report(trace, mdp, surrogate, spec, measure_delta(mdp, spec), 1.0)
    assert report.delta == 0.0
    assert report.measured_gap == pytest.approx(0.0, abs=1e-12)

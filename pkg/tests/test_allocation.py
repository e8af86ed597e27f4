import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqcara.allocation import (
    PI_FLOOR,
    AllocationConditionError,
    TuningConfig,
    UnsupportedRuleError,
    check_allocation_conditions,
    decide_allocation,
    estimate_allocation_expectation,
    fixed_rule,
    maximize_utility,
    target_probability,
    target_rule,
    tuning_schedule,
    utility,
)
from seqcara.estimation import InfoMatrix, covariance_estimate
from seqcara.model import paper_model
from seqcara.numkit import InvalidInputError, RngStream


def random_state(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(10, 300))
    blocks = []
    for _ in range(2):
        m = rng.normal(size=(2, 2))
        blocks.append(m @ m.T / 4.0 + 0.01 * np.eye(2))
    theta = rng.normal(0.0, 1.5, (2, 2))
    x = (1.0, float(rng.normal(0.0, 2.0)))
    eta = float(rng.choice([0.0, 0.1, 1.0, 5.0]))
    pi1 = float(rng.uniform(0.05, 0.95))
    return InfoMatrix(tuple(blocks), n), theta, x, eta, (pi1, 1.0 - pi1)


def test_equal_arms_give_even_target():
    theta = [[0.3, 0.5], [0.3, 0.5]]
    np.testing.assert_allclose(target_probability(theta, (1.0, 2.0), 1.0), [0.5, 0.5])
    np.testing.assert_allclose(target_probability(theta, (1.0, 2.0), 1.0, "normal"), [0.5, 0.5])


def test_target_is_clamped():
    pi = target_probability([[50.0, 0.0], [-50.0, 0.0]], (1.0, 0.0), 0.1)
    assert pi[0] == 1.0 - PI_FLOOR
    with pytest.raises(InvalidInputError):
        target_probability([[0.0, 0.0], [0.0, 0.0]], (1.0, 0.0), 0.0)
    with pytest.raises(UnsupportedRuleError):
        target_probability(np.zeros((3, 2)), (1.0, 0.0), 1.0)


def test_tuning_schedule_examples():
    assert tuning_schedule(TuningConfig(t0=0.5, vary_t=True), 2.0) == (1.0, 0.0)
    assert tuning_schedule(TuningConfig(t0=1.0, eta0=1.0, vary_eta=True), 1e-3)[1] == 10.0
    assert tuning_schedule(TuningConfig(t0=1.0, vary_t=True), 1e-9)[0] == 0.1
    assert tuning_schedule(TuningConfig(t0=2.0, eta0=0.1), 5.0) == (2.0, 0.1)
    with pytest.raises(InvalidInputError):
        TuningConfig(t0=20.0)
    with pytest.raises(InvalidInputError):
        TuningConfig(j_function="cauchy")


def test_entropy_term_vanishes_at_target():
    info, theta, x, _, pi = random_state(3)
    assert utility(pi, info, x, theta, 7.0, pi) == pytest.approx(utility(pi, info, x, theta, 0.0, pi), abs=1e-12)


def test_singular_information_gives_minus_inf():
    info = InfoMatrix((np.zeros((2, 2)), np.eye(2)), 10)
    assert utility((0.5, 0.5), info, (1.0, 1.0), np.zeros((2, 2)), 0.0, (0.5, 0.5)) == -math.inf
    with pytest.raises(InvalidInputError):
        utility((0.7, 0.7), info, (1.0, 1.0), np.zeros((2, 2)), 0.0, (0.5, 0.5))


@pytest.mark.parametrize("seed", range(100))
def test_maximizer_beats_dense_grid(seed):
    info, theta, x, eta, pi = random_state(seed)
    p = maximize_utility(info, x, theta, eta, pi)
    best = utility(p, info, x, theta, eta, pi)
    grid = max(utility((g, 1.0 - g), info, x, theta, eta, pi) for g in np.linspace(0.0, 1.0, 10_001))
    assert best >= grid - 1e-3


def test_decide_allocation_fallbacks():
    info, theta, x, eta, _ = random_state(8)
    cov = covariance_estimate(info)
    tuning = TuningConfig(t0=1.0, eta0=1.0)
    bal = decide_allocation(info, cov, theta, x, tuning, "balanced")
    np.testing.assert_array_equal(bal.optimal_p, [0.5, 0.5])
    tgt = decide_allocation(info, cov, theta, x, tuning, "target")
    np.testing.assert_allclose(tgt.optimal_p, tgt.target_pi)
    no_eta = decide_allocation(info, cov, theta, x, TuningConfig(t0=1.0), "target")
    np.testing.assert_array_equal(no_eta.optimal_p, [0.5, 0.5])
    plain = decide_allocation(info, cov, theta, x, tuning)
    np.testing.assert_allclose(plain.optimal_p, maximize_utility(info, x, theta, 1.0, plain.target_pi))
    with pytest.raises(InvalidInputError):
        decide_allocation(info, cov, theta, x, tuning, "greedy")


def test_fixed_rule_expectation():
    res = estimate_allocation_expectation(paper_model(), fixed_rule([0.3, 0.7]), 10_000, RngStream(1))
    np.testing.assert_allclose(res.nu, [0.3, 0.7])
    np.testing.assert_allclose(res.sigma2, 0.0, atol=1e-12)
    np.testing.assert_allclose(res.sigma1, [[0.21, -0.21], [-0.21, 0.21]])


def test_target_rule_expectation_is_symmetric():
    res = estimate_allocation_expectation(paper_model(), target_rule(1.0), 20_000, RngStream(2))
    assert abs(res.nu[0] - 0.5) < 0.02
    assert res.nu.sum() == pytest.approx(1.0)
    assert np.all(np.linalg.eigvalsh(res.sigma) > -1e-12)
    with pytest.raises(InvalidInputError):
        estimate_allocation_expectation(paper_model(), target_rule(), 100, RngStream(2))


def test_condition_checks():
    model = paper_model()
    nu = check_allocation_conditions(target_rule(), model, RngStream(4))
    assert 0.0 < nu[0] < 1.0
    with pytest.raises(AllocationConditionError):
        check_allocation_conditions(lambda th, xs: np.tile([1.0, 0.0], (len(xs), 1)), model, RngStream(4))
    with pytest.raises(AllocationConditionError):
        check_allocation_conditions(lambda th, xs: np.tile([0.6, 0.6], (len(xs), 1)), model, RngStream(4))
    with pytest.raises(AllocationConditionError):
        check_allocation_conditions(lambda th, xs: np.ones((3, 2)) / 2, model, RngStream(4))


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_decision_is_a_probability_vector(seed):
    info, theta, x, eta, _ = random_state(seed)
    d = decide_allocation(info, covariance_estimate(info), theta, x, TuningConfig(t0=1.0, eta0=min(eta, 10.0)))
    assert d.optimal_p.sum() == pytest.approx(1.0)
    assert np.all((d.optimal_p >= 0.0) & (d.optimal_p <= 1.0))

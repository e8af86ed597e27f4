import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqcara.estimation import (
    RIDGE,
    ArmData,
    ContrastSpec,
    InfoMatrix,
    InformationDeficientError,
    contrast_covariance,
    covariance_estimate,
    fit_arm_mle,
    log_likelihood,
    pooled_information,
    score_and_info,
    treatment_difference_contrast,
)
from seqcara.numkit import InvalidInputError


def loglik_grid(xs, ys, a, b, ridge):
    """Vectorised penalised log-likelihood over a mesh of (a, b)."""
    eta = a[..., None] * xs[:, 0] + b[..., None] * xs[:, 1]
    ll = (ys * eta - np.logaddexp(0.0, eta)).sum(axis=-1)
    return ll - ridge * (a * a + b * b)


def grid_oracle(xs, ys, ridge, lo=-20.0, hi=20.0):
    """Coarse-to-fine exhaustive search, independent of the Newton code."""
    ca, cb, half = 0.5 * (lo + hi), 0.5 * (lo + hi), 0.5 * (hi - lo)
    for _ in range(14):
        g = np.linspace(-half, half, 81)
        A, B = np.meshgrid(ca + g, cb + g, indexing="ij")
        ll = loglik_grid(xs, ys, A, B, ridge)
        i, j = np.unravel_index(np.argmax(ll), ll.shape)
        ca, cb = A[i, j], B[i, j]
        half *= 0.15
    return np.array([ca, cb])


def random_dataset(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(12, 31))
    xi = rng.normal(0.0, 1.5, n)
    xs = np.column_stack([np.ones(n), xi])
    theta = rng.normal(0.0, 0.8, 2)
    ys = (rng.random(n) < 1.0 / (1.0 + np.exp(-xs @ theta))).astype(int)
    return xs, ys


@pytest.mark.parametrize("seed", range(20))
def test_mle_matches_grid_search(seed):
    xs, ys = random_dataset(seed)
    fit = fit_arm_mle(ArmData(xs.tolist(), ys.tolist()))
    oracle = grid_oracle(xs, ys, fit.ridge_used)
    assert np.max(np.abs(fit.theta_hat - oracle)) < 5e-3


def test_constant_covariate_uses_ridge():
    # the slope is not identified; intercept should sit near log(2)
    fit = fit_arm_mle(ArmData([(1.0, 0.0)] * 3, [1, 1, 0]))
    assert fit.ridge_used == RIDGE
    assert fit.theta_hat[0] == pytest.approx(math.log(2.0), abs=1e-3)
    assert fit.theta_hat[1] == pytest.approx(0.0, abs=1e-12)


def test_separated_data_fall_back_to_ridge():
    xs = [(1.0, -2.0), (1.0, -1.0), (1.0, 1.0), (1.0, 2.0)]
    ys = [0, 0, 1, 1]
    data = ArmData(xs, ys)
    fit = fit_arm_mle(data)
    assert fit.ridge_used == RIDGE
    assert np.all(np.isfinite(fit.theta_hat))
    assert fit.score_norm < 1e-8
    oracle = grid_oracle(np.array(xs), np.array(ys), RIDGE, -60.0, 60.0)
    assert log_likelihood(fit.theta_hat, data, RIDGE) >= log_likelihood(oracle, data, RIDGE) - 1e-9


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31))
def test_score_vanishes_at_unpenalised_fit(seed):
    xs, ys = random_dataset(seed)
    data = ArmData(xs.tolist(), ys.tolist())
    fit = fit_arm_mle(data)
    score, info = score_and_info(fit.theta_hat, data)
    grad = score - 2.0 * fit.ridge_used * fit.theta_hat
    assert np.max(np.abs(grad)) < 1e-8
    assert np.all(np.linalg.eigvalsh(info + 2.0 * fit.ridge_used * np.eye(2)) > 0.0)


def test_score_and_info_against_numpy():
    xs, ys = random_dataset(99)
    theta = np.array([0.3, -0.4])
    score, info = score_and_info(theta, ArmData(xs.tolist(), ys.tolist()))
    mu = 1.0 / (1.0 + np.exp(-xs @ theta))
    np.testing.assert_allclose(score, xs.T @ (ys - mu), atol=1e-12)
    np.testing.assert_allclose(info, (xs * (mu * (1 - mu))[:, None]).T @ xs, atol=1e-12)


def test_armdata_validation():
    with pytest.raises(InvalidInputError):
        ArmData([(1.0, 0.0)], [1, 0])
    with pytest.raises(InvalidInputError):
        ArmData([(1.0, 0.0), (1.0,)], [1, 0])
    with pytest.raises(InvalidInputError):
        fit_arm_mle(ArmData())


def two_arm_data(seed=1):
    out = []
    for k in range(2):
        xs, ys = random_dataset(seed + k)
        out.append(ArmData(xs.tolist(), ys.tolist()))
    return out


def test_pooled_information_and_covariance():
    arms = two_arm_data()
    thetas = [fit_arm_mle(a).theta_hat for a in arms]
    info = pooled_information(arms, thetas)
    n = len(arms[0]) + len(arms[1])
    assert info.n == n
    for data, th, block in zip(arms, thetas, info.blocks):
        _, s = score_and_info(th, data)
        np.testing.assert_allclose(block, s / n, atol=1e-14)
    cov = covariance_estimate(info)
    np.testing.assert_allclose(cov.v_hat, np.linalg.inv(info.matrix), rtol=1e-10)
    eig = np.linalg.eigvalsh(cov.v_hat)
    assert cov.lambda_max == pytest.approx(eig[-1], rel=1e-12)
    assert cov.lambda_min == pytest.approx(eig[0], rel=1e-12)


def test_deficient_information():
    info = InfoMatrix((np.eye(2), np.zeros((2, 2))), 10)
    with pytest.raises(InformationDeficientError):
        covariance_estimate(info)


def test_difference_contrast_and_coefficient_major_rows():
    h = treatment_difference_contrast()
    np.testing.assert_array_equal(h.h_matrix.T, [[1, 0, -1, 0], [0, 1, 0, -1]])
    theta = np.array([0.1, -1.0, 0.1, 1.0])
    np.testing.assert_allclose(h.h_matrix.T @ theta, [0.0, -2.0])
    # the same contrast written against (alpha_1, alpha_2, slope_1, slope_2)
    alt = ContrastSpec.from_coefficient_major_rows([[1, -1, 0, 0], [0, 0, 1, -1]], 2, 2)
    np.testing.assert_array_equal(alt.h_matrix, h.h_matrix)


def test_contrast_covariance_matches_numpy():
    arms = two_arm_data(5)
    info = pooled_information(arms, [fit_arm_mle(a).theta_hat for a in arms])
    cov = covariance_estimate(info)
    h = treatment_difference_contrast()
    got = contrast_covariance(cov, h)
    np.testing.assert_allclose(got, h.h_matrix.T @ cov.v_hat @ h.h_matrix, rtol=1e-12)
    assert np.array_equal(got, got.T)


def test_contrast_validation():
    with pytest.raises(InvalidInputError):
        ContrastSpec(np.array([[1.0, 2.0], [2.0, 4.0], [0.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(InvalidInputError):
        ContrastSpec(np.ones((2, 3)))
    with pytest.raises(InvalidInputError):
        ContrastSpec.from_coefficient_major_rows([[1, 0, 0]], 2, 2)


def test_contrast_covariance_examples():
    h = ContrastSpec.from_coefficient_major_rows([[1, -1, 0, 0], [0, 0, 1, -1]], 2, 2)
    np.testing.assert_array_equal(contrast_covariance(np.eye(4), h), 2.0 * np.eye(2))
    identity = ContrastSpec(np.eye(4))
    v = np.diag([1.0, 2.0, 3.0, 4.0]) + 0.1
    np.testing.assert_allclose(contrast_covariance(v, identity), v)
    np.testing.assert_allclose(contrast_covariance(3.0 * v, h), 3.0 * contrast_covariance(v, h))
    with pytest.raises(InvalidInputError):
        contrast_covariance(np.eye(3), h)

import math

import numpy as np
import pytest

from seqcara.model import (
    TrueModel,
    better_arm,
    draw_covariate,
    draw_response,
    logistic,
    make_covariate,
    mean_response,
    paper_model,
)
from seqcara.numkit import InvalidInputError, MixtureNormalSpec, RngStream


def test_logistic_is_overflow_safe():
    assert logistic(0.0) == 0.5
    assert logistic(1e6) == 1.0
    assert logistic(-1e6) == pytest.approx(math.exp(-700.0))
    assert logistic(2.0) == pytest.approx(1.0 / (1.0 + math.exp(-2.0)), rel=1e-15)


def test_paper_model_shape():
    m = paper_model()
    assert m.n_arms == 2 and m.p == 2
    np.testing.assert_array_equal(m.theta, [0.1, -1.0, 0.1, 1.0])
    assert m.covariate_dist.mean == 0.0


def test_model_validation():
    with pytest.raises(InvalidInputError):
        TrueModel(arms=((0.1, 1.0),))
    with pytest.raises(InvalidInputError):
        TrueModel(arms=((0.1, 1.0), (0.1,)))
    with pytest.raises(InvalidInputError):
        TrueModel(arms=((0.1, 1.0), (0.1, 1.0)), link="probit")
    with pytest.raises(InvalidInputError):
        TrueModel(arms=((0.1, float("inf")), (0.1, 1.0)))


def test_better_arm_follows_sign_of_xi():
    m = paper_model()
    # arm 1 has slope -1, arm 2 slope +1: arm 1 wins for negative xi
    assert better_arm(m, make_covariate(-1.5)) == 0
    assert better_arm(m, make_covariate(1.5)) == 1
    assert better_arm(m, make_covariate(0.0)) == 0  # tie goes to the lower index
    with pytest.raises(InvalidInputError):
        better_arm(m, (1.0, 0.0, 2.0))


def test_response_frequency_matches_mean():
    m = paper_model()
    rng = RngStream(21)
    x = make_covariate(0.7)
    ys = [draw_response(m, 1, x, rng) for _ in range(20_000)]
    assert abs(np.mean(ys) - mean_response(m.arms[1], x)) < 0.012
    with pytest.raises(InvalidInputError):
        draw_response(m, 2, x, rng)


def test_covariates_follow_the_mixture():
    m = TrueModel(arms=((0.0, 1.0), (0.0, -1.0)), covariate_dist=MixtureNormalSpec(((3.0, 0.5, 1.0),)))
    rng = RngStream(2)
    xs = np.array([draw_covariate(m, rng) for _ in range(5000)])
    assert np.all(xs[:, 0] == 1.0)
    assert abs(xs[:, 1].mean() - 3.0) < 0.03

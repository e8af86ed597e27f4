import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seqcara.numkit import (
    InvalidInputError,
    MixtureNormalSpec,
    NotPositiveDefiniteError,
    RngStream,
    _pick,
    chi_square_quantile,
    draw_bernoulli,
    draw_categorical,
    draw_mixture_normal,
    invert_spd,
    log_det_spd,
    stream_id_for,
    sym_eig_extremes,
    sym_eigenvalues,
)

# 30-digit incomplete-gamma inversions (mpmath), frozen
CHI2_ORACLE = {
    (0.05, 1): 3.8414588206941259, (0.05, 2): 5.9914645471079819, (0.05, 3): 7.8147279032511798,
    (0.05, 4): 9.4877290367811566, (0.05, 6): 12.591587243743979,
    (0.01, 1): 6.6348966010212151, (0.01, 2): 9.2103403719761827, (0.01, 3): 11.344866730144372,
    (0.01, 4): 13.276704135987624, (0.01, 6): 16.811893829770931,
    (0.1, 1): 2.7055434540954145, (0.1, 2): 4.6051701859880913, (0.1, 3): 6.2513886311703231,
    (0.1, 4): 7.779440339734858, (0.1, 6): 10.64464067566842,
}

finite = st.floats(-1e3, 1e3, allow_nan=False)


def closed_form_2x2(a, b, c):
    mid, rad = 0.5 * (a + c), math.hypot(0.5 * (a - c), b)
    return mid - rad, mid + rad


@settings(max_examples=300, deadline=None)
@given(finite, finite, finite)
def test_eig_extremes_match_2x2_closed_form(a, b, c):
    lo, hi = sym_eig_extremes([[a, b], [b, c]])
    elo, ehi = closed_form_2x2(a, b, c)
    scale = max(1.0, abs(a), abs(b), abs(c))
    assert abs(lo - elo) <= 1e-12 * scale
    assert abs(hi - ehi) <= 1e-12 * scale


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31))
def test_jacobi_matches_lapack(d, seed):
    a = np.random.default_rng(seed).normal(size=(d, d))
    a = a + a.T
    np.testing.assert_allclose(sym_eigenvalues(a), np.linalg.eigvalsh(a), atol=1e-10)


def test_eig_rejects_bad_input():
    with pytest.raises(InvalidInputError):
        sym_eig_extremes([[1.0, 2.0], [3.0, 1.0]])
    with pytest.raises(InvalidInputError):
        sym_eig_extremes([[1.0, float("nan")], [float("nan"), 1.0]])
    with pytest.raises(InvalidInputError):
        sym_eig_extremes(np.zeros((2, 3)))


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31))
def test_spd_inverse_and_log_det(d, seed):
    m = np.random.default_rng(seed).normal(size=(d, d))
    a = m @ m.T + d * np.eye(d)
    a = 0.5 * (a + a.T)
    np.testing.assert_allclose(invert_spd(a) @ a, np.eye(d), atol=1e-9)
    assert log_det_spd(a) == pytest.approx(np.linalg.slogdet(a)[1], rel=1e-12, abs=1e-12)


def test_not_positive_definite():
    a = [[1.0, 2.0], [2.0, 1.0]]
    with pytest.raises(NotPositiveDefiniteError):
        invert_spd(a)
    assert log_det_spd(a) == -math.inf
    assert log_det_spd([[0.0, 0.0], [0.0, 0.0]]) == -math.inf


@pytest.mark.parametrize("key", sorted(CHI2_ORACLE))
def test_chi_square_quantile_oracle(key):
    assert chi_square_quantile(*key) == pytest.approx(CHI2_ORACLE[key], abs=1e-9)


def test_chi_square_two_dof_closed_form():
    # with two degrees of freedom the upper tail is exp(-x/2)
    for alpha in (0.5, 0.05, 0.01, 1e-6):
        assert chi_square_quantile(alpha, 2) == pytest.approx(-2.0 * math.log(alpha), abs=1e-9)


@pytest.mark.parametrize("alpha,dof", [(0.0, 1), (1.0, 1), (0.05, 0), (0.05, 1.5), (-0.1, 2)])
def test_chi_square_rejects(alpha, dof):
    with pytest.raises(InvalidInputError):
        chi_square_quantile(alpha, dof)


def test_stream_ids_are_distinct_and_checked():
    assert stream_id_for(0, 0) == 0
    assert stream_id_for(1, 0) == 1 << 32
    assert len({stream_id_for(s, r) for s in range(5) for r in range(5)}) == 25
    with pytest.raises(InvalidInputError):
        stream_id_for(-1, 0)
    with pytest.raises(InvalidInputError):
        stream_id_for(0, 1 << 32)


def test_rng_determinism_and_independence():
    a, b, c = RngStream(7, 3), RngStream(7, 3), RngStream(7, 4)
    xa = [a.uniform() for _ in range(50)]
    assert xa == [b.uniform() for _ in range(50)]
    assert xa != [c.uniform() for _ in range(50)]
    ref = np.random.Generator(np.random.PCG64(np.random.SeedSequence(7, spawn_key=(3,))))
    assert xa == ref.random(50).tolist()
    with pytest.raises(InvalidInputError):
        RngStream(-1)


def test_normal_moments():
    rng = RngStream(11)
    z = np.array([rng.normal() for _ in range(40_000)])
    assert abs(z.mean()) < 0.03
    assert abs(z.std() - 1.0) < 0.03


def test_mixture_spec_validation_and_moments():
    spec = MixtureNormalSpec(((2.0, 1.0, 0.5), (-2.0, 1.0, 0.5)))
    assert spec.mean == 0.0
    assert spec.variance == pytest.approx(5.0)
    assert spec.cumulative_weights == (0.5, 1.0)
    for bad in [(), ((0.0, 0.0, 1.0),), ((0.0, 1.0, 0.6), (1.0, 1.0, 0.6)), ((0.0, 1.0, 1.5),)]:
        with pytest.raises(InvalidInputError):
            MixtureNormalSpec(bad)
    rng = RngStream(3)
    xs = np.array([draw_mixture_normal(spec, rng) for _ in range(40_000)])
    assert abs(xs.mean()) < 0.05
    assert abs(xs.var() - 5.0) < 0.15


def test_pick_and_categorical():
    assert _pick([0.2, 0.5, 1.0], 0.0) == 0
    assert _pick([0.2, 0.5, 1.0], 0.2) == 1
    assert _pick([0.2, 0.5, 1.0], 0.99) == 2
    # rounding in the last cumulative weight cannot push past the last index
    assert _pick([0.3, 0.9999999], 0.99999995) == 1
    rng = RngStream(5)
    counts = np.bincount([draw_categorical([0.2, 0.3, 0.5], rng) for _ in range(20_000)], minlength=3)
    np.testing.assert_allclose(counts / 20_000, [0.2, 0.3, 0.5], atol=0.015)
    with pytest.raises(InvalidInputError):
        draw_categorical([0.5, 0.6], rng)
    assert draw_bernoulli(0.0, rng) == 0
    assert draw_bernoulli(1.0, rng) == 1
    with pytest.raises(InvalidInputError):
        draw_bernoulli(1.5, rng)

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.integrate import trapezoid

from hiergp.errors import InvalidParameterError, NumericalError
from hiergp.stochastic import (
    density_normal,
    density_student_t,
    jittered_cholesky,
    make_rng,
    sample_beta,
    sample_categorical,
    sample_categorical_log_rows,
    sample_inverse_gamma,
    sample_mvn,
    sample_mvn_precision,
    sample_normal,
)

N = 100_000


# --- rng -------------------------------------------------------------------

def test_same_seed_same_sequence():
    a = make_rng(42).standard_normal(10)
    b = make_rng(42).standard_normal(10)
    assert np.array_equal(a, b)


def test_streams_differ():
    a = make_rng(42, 0).standard_normal(10)
    b = make_rng(42, 1).standard_normal(10)
    assert not np.array_equal(a, b)
    assert np.array_equal(b, make_rng(42, 1).standard_normal(10))


def test_streams_uncorrelated():
    a = make_rng(3, 0).standard_normal(N)
    b = make_rng(3, 1).standard_normal(N)
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.02


@pytest.mark.parametrize("seed", [-1, 2**64])
def test_bad_seed(seed):
    with pytest.raises(InvalidParameterError):
        make_rng(seed)


# --- normal ----------------------------------------------------------------

def test_normal_moments():
    rng = make_rng(1)
    x = np.array([sample_normal(0.0, 1.0, rng) for _ in range(N)])
    assert abs(x.mean()) < 0.02
    assert abs(x.var() - 1.0) < 0.05


def test_normal_concentrated():
    rng = make_rng(2)
    x = np.array([sample_normal(5.0, 0.001, rng) for _ in range(1000)])
    assert np.all((x >= 4.99) & (x <= 5.01))


def test_normal_replay():
    assert sample_normal(0, 1, make_rng(42)) == sample_normal(0, 1, make_rng(42))


@pytest.mark.parametrize("sd", [0.0, -1.0, math.nan, math.inf])
def test_normal_bad_sd(sd):
    with pytest.raises(InvalidParameterError):
        sample_normal(0.0, sd, make_rng(0))


# --- multivariate normal ----------------------------------------------------

def test_mvn_identity_moments():
    rng = make_rng(3)
    x = np.array([sample_mvn(np.zeros(3), np.eye(3), rng) for _ in range(N)])
    assert np.all(np.abs(x.mean(axis=0)) < 0.02)
    assert np.all(np.abs(x.var(axis=0) - 1.0) < 0.05)


def test_mvn_diagonal_variances():
    rng = make_rng(4)
    x = np.array([sample_mvn(np.zeros(2), np.diag([4.0, 9.0]), rng) for _ in range(N)])
    assert np.allclose(x.var(axis=0), [4.0, 9.0], rtol=0.05)


def test_mvn_rank_deficient():
    # oracle: the null eigenvector of [[1,1],[1,1]] is (1,-1)/sqrt(2), so draws
    # projected on it must vanish up to the jitter
    cov = np.array([[1.0, 1.0], [1.0, 1.0]])
    vals, vecs = np.linalg.eigh(cov)
    null = vecs[:, np.argmin(vals)]
    rng = make_rng(5)
    for _ in range(1000):
        x = sample_mvn(np.zeros(2), cov, rng)
        assert abs(x @ null) < 1e-3
        assert abs(x[0] - x[1]) < 1e-3


def test_mvn_diag_matches_univariate():
    rng = make_rng(6)
    m = 10_000
    joint = np.array([sample_mvn(np.zeros(2), np.diag([1.0, 4.0]), rng) for _ in range(m)])
    uni = np.array([sample_normal(0.0, 2.0, rng) for _ in range(m)])
    assert stats.ks_2samp(joint[:, 1], uni).pvalue > 0.01


def test_mvn_rejects_asymmetric():
    with pytest.raises(InvalidParameterError):
        sample_mvn(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]), make_rng(0))


def test_mvn_precision_matches_dense_oracle():
    rng = make_rng(7)
    a = rng.standard_normal((4, 4))
    q = a @ a.T + 4 * np.eye(4)
    b = rng.standard_normal(4)
    cov = np.linalg.inv(q)
    mean = cov @ b
    x = np.array([sample_mvn_precision(q, b, rng) for _ in range(40_000)])
    assert np.allclose(x.mean(axis=0), mean, atol=0.01)
    assert np.allclose(np.cov(x.T), cov, atol=0.01)


def test_jitter_ladder():
    chol, jitter = jittered_cholesky(np.ones((3, 3)))
    assert jitter > 0
    assert jitter <= 1e-4
    assert np.allclose(chol @ chol.T, np.ones((3, 3)), atol=1e-4)
    with pytest.raises(NumericalError):
        jittered_cholesky(np.array([[1.0, 0.0], [0.0, -1.0]]))


# --- inverse gamma ---------------------------------------------------------

def test_inverse_gamma_mean():
    x = sample_inverse_gamma(3.0, 2.0, make_rng(8), size=N)
    assert abs(x.mean() - 1.0) < 0.03


def test_inverse_gamma_tail():
    # oracle: P(X > 30) for IG(1,1) from the closed-form tail
    p_tail = stats.invgamma(1.0, scale=1.0).sf(30.0)
    assert p_tail > 0.01
    x = sample_inverse_gamma(1.0, 1.0, make_rng(9), size=N)
    frac = np.mean(x > 30.0)
    assert frac > 0.01
    assert abs(frac - p_tail) < 4 * math.sqrt(p_tail / N)


def test_inverse_gamma_deterministic():
    assert sample_inverse_gamma(2, 3, make_rng(10)) == sample_inverse_gamma(2, 3, make_rng(10))


def test_inverse_gamma_distribution():
    x = sample_inverse_gamma(2.5, 1.5, make_rng(11), size=20_000)
    assert stats.kstest(x, stats.invgamma(2.5, scale=1.5).cdf).pvalue > 0.01


@pytest.mark.parametrize("shape,rate", [(0, 1), (1, 0), (-1, 1), (math.nan, 1)])
def test_inverse_gamma_invalid(shape, rate):
    with pytest.raises(InvalidParameterError):
        sample_inverse_gamma(shape, rate, make_rng(0))


# --- beta -----------------------------------------------------------------

def test_beta_mean():
    x = sample_beta(1.0, 6.0, make_rng(12), size=N)
    assert abs(x.mean() - 1.0 / 7.0) < 0.01


def test_beta_uniform_ks():
    x = sample_beta(1.0, 1.0, make_rng(13), size=N)
    assert stats.kstest(x, "uniform").statistic < 0.01


def test_beta_22_moments():
    x = sample_beta(2.0, 2.0, make_rng(14), size=N)
    assert abs(x.mean() - 0.5) < 0.01
    assert abs(x.var() - 0.05) < 0.005


@pytest.mark.parametrize("a,b", [(0, 1), (1, -2), (math.inf, 1)])
def test_beta_invalid(a, b):
    with pytest.raises(InvalidParameterError):
        sample_beta(a, b, make_rng(0))


# --- categorical -----------------------------------------------------------

def test_categorical_point_mass():
    rng = make_rng(15)
    # weights (0,1,0): the only admissible index is the middle one (1-based 2)
    assert all(sample_categorical([0, 1, 0], rng) == 1 for _ in range(1000))


def test_categorical_fair():
    rng = make_rng(16)
    x = np.array([sample_categorical([1, 1], rng) for _ in range(N)])
    assert abs(x.mean() - 0.5) < 0.01


def test_categorical_frequencies():
    rng = make_rng(17)
    x = np.array([sample_categorical([1, 2, 7], rng) for _ in range(N)])
    freq = np.bincount(x, minlength=3) / N
    assert np.allclose(freq, [0.1, 0.2, 0.7], atol=0.01)


@pytest.mark.parametrize("w", [[0, 0], [1, -1], [], [math.nan, 1]])
def test_categorical_invalid(w):
    with pytest.raises(InvalidParameterError):
        sample_categorical(w, make_rng(0))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from([0.0, 0.5, 1.0, 3.0]), min_size=1, max_size=8).filter(lambda w: sum(w) > 0),
       st.integers(0, 2**32))
def test_categorical_never_picks_zero_weight(w, seed):
    rng = make_rng(seed)
    for _ in range(20):
        assert w[sample_categorical(w, rng)] > 0


def test_log_rows_extreme_scales():
    # rows spanning hundreds of orders of magnitude still normalize
    lw = np.array([[0.0, -800.0, -1600.0], [-1e4, -1e4 + math.log(3.0), -math.inf]])
    rng = make_rng(18)
    draws = np.array([sample_categorical_log_rows(lw, rng) for _ in range(20_000)])
    assert np.all(draws[:, 0] == 0)
    assert abs(np.mean(draws[:, 1] == 1) - 0.75) < 0.01
    assert np.all(draws[:, 1] != 2)


def test_log_rows_all_neg_inf():
    with pytest.raises(NumericalError):
        sample_categorical_log_rows(np.full((1, 3), -math.inf), make_rng(0))


# --- densities -------------------------------------------------------------

@pytest.mark.parametrize("x,mean,var,expected", [(0, 0, 1, 0.398942), (1, 0, 1, 0.241971), (0, 0, 4, 0.199471)])
def test_normal_density_values(x, mean, var, expected):
    assert density_normal(x, mean, var) == pytest.approx(expected, abs=1e-6)


def test_student_t_values():
    assert density_student_t(0.0, 2.0, 1.0) == pytest.approx(0.353553, abs=1e-6)
    assert density_student_t(0.0, 2.0, 4.0) == pytest.approx(0.176777, abs=1e-6)


def test_student_t_matches_scipy():
    x = np.linspace(-20, 20, 101)
    ours = density_student_t(x, 3.0, 2.5)
    ref = stats.t(df=3.0, scale=math.sqrt(2.5)).pdf(x)
    assert np.allclose(ours, ref, rtol=1e-12)


def test_student_t_integrates_to_one():
    x = np.arange(-50.0, 50.0 + 1e-9, 0.01)
    assert abs(trapezoid(density_student_t(x, 2.0, 1.0), x) - 1.0) < 1e-3


@pytest.mark.parametrize("mean,var", [(0.0, 1.0), (3.0, 0.01), (-2.0, 25.0)])
def test_normal_density_integrates_to_one(mean, var):
    x = np.linspace(mean - 40 * math.sqrt(var), mean + 40 * math.sqrt(var), 200_001)
    dens = density_normal(x, mean, var)
    assert np.all(dens >= 0)
    assert abs(trapezoid(dens, x) - 1.0) < 1e-3


@pytest.mark.parametrize("dof,scale", [(0, 1), (1, 0), (-1, 1)])
def test_student_t_invalid(dof, scale):
    with pytest.raises(InvalidParameterError):
        density_student_t(0.0, dof, scale)


def test_normal_density_invalid():
    with pytest.raises(InvalidParameterError):
        density_normal(0.0, 0.0, 0.0)

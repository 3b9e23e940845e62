import numpy as np
import pytest
import scipy.stats

from msbi.rng import (
    Beta,
    Gamma,
    Gaussian,
    Poisson,
    RngState,
    StudentT,
    Uniform,
    sample_mvn,
    sample_niw,
    sample_scalar,
)


def test_same_seed_same_stream():
    a = RngState(123).standard_normal(1000)
    b = RngState(123).standard_normal(1000)
    assert np.array_equal(a, b)


def test_different_seeds_differ():
    a = RngState(1).standard_normal(100)
    b = RngState(2).standard_normal(100)
    assert not np.array_equal(a, b)


def test_substream_is_independent_of_parent_consumption():
    """Deriving a child never advances the parent and vice versa."""
    parent = RngState(7)
    child_before = parent.substream("x").standard_normal(10)
    parent.standard_normal(1000)
    child_after = parent.substream("x").standard_normal(10)
    assert np.array_equal(child_before, child_after)


def test_substream_paths_distinguish():
    root = RngState(7)
    a = root.substream("a").standard_normal(10)
    b = root.substream("b").standard_normal(10)
    c = root.substream("a", 0).standard_normal(10)
    assert not np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_substream_nesting_equals_flat_path():
    root = RngState(99)
    nested = root.substream("batch", 3).substream("prior").standard_normal(5)
    flat = root.substream("batch", 3, "prior").standard_normal(5)
    assert np.array_equal(nested, flat)


def test_seed_domain():
    RngState(0)
    RngState(2**64 - 1)
    with pytest.raises(ValueError):
        RngState(-1)
    with pytest.raises(ValueError):
        RngState(2**64)
    with pytest.raises(ValueError):
        RngState(5).substream()


@pytest.mark.parametrize(
    "dist, mean, var",
    [
        (Gaussian(0.0, 1.0), 0.0, 1.0),
        (Gaussian(3.0, 2.0), 3.0, 4.0),
        (Beta(2.0, 5.0), 2.0 / 7.0, 2.0 * 5.0 / (49.0 * 8.0)),
        (Gamma(25.0, 0.03), 25.0 / 0.03, 25.0 / 0.03**2),
        (Gamma(5.0, 0.5), 10.0, 20.0),
        (StudentT(7.0), 0.0, 7.0 / 5.0),
        (Poisson(4.0), 4.0, 4.0),
        (Uniform(-1.0, 3.0), 1.0, 16.0 / 12.0),
    ],
)
def test_scalar_moments(dist, mean, var):
    """Empirical mean and variance sit within 5 standard errors of analytic."""
    n = 100_000
    draws = sample_scalar(RngState(2024).substream(repr(dist)), dist, n)
    se_mean = np.sqrt(var / n)
    assert abs(draws.mean() - mean) < 5 * se_mean
    # SE of the sample variance from the empirical fourth moment.
    centered = draws - draws.mean()
    se_var = np.sqrt((np.mean(centered**4) - var**2) / n)
    assert abs(draws.var() - var) < 5 * se_var


def test_beta_mean_matches_analytic():
    draws = sample_scalar(RngState(8), Beta(2.0, 5.0), 100_000)
    assert abs(draws.mean() - 2.0 / 7.0) < 0.01
    assert draws.min() >= 0.0 and draws.max() <= 1.0


def test_poisson_zero_rate():
    assert np.array_equal(sample_scalar(RngState(1), Poisson(0.0), 5), np.zeros(5))


def test_student_t_tail_heavier_than_gaussian():
    draws = sample_scalar(RngState(11), StudentT(2.0), 100_000)
    frac = np.mean(np.abs(draws) > 4.0)
    # P(|t_2| > 4) ~ 0.057 vs ~6e-5 for a standard normal.
    assert frac > 0.03


def test_student_t_matches_scipy_cdf():
    draws = sample_scalar(RngState(12), StudentT(3.0, loc=1.0, scale=2.0), 50_000)
    stat, p = scipy.stats.kstest(draws, scipy.stats.t(df=3, loc=1.0, scale=2.0).cdf)
    assert p > 1e-3


@pytest.mark.parametrize(
    "bad",
    [
        lambda: Gaussian(0.0, 0.0),
        lambda: Beta(0.0, 1.0),
        lambda: Gamma(1.0, -1.0),
        lambda: StudentT(0.0),
        lambda: StudentT(2.0, scale=0.0),
        lambda: Poisson(-1.0),
        lambda: Uniform(1.0, 1.0),
    ],
)
def test_invalid_parameters_rejected(bad):
    with pytest.raises(ValueError):
        bad()


def test_sample_count_must_be_nonnegative():
    with pytest.raises(ValueError):
        sample_scalar(RngState(0), Gaussian(), -1)


def test_mvn_moments():
    n = 100_000
    chol = np.array([[2.0, 0.0], [1.0, 1.0]])
    cov = chol @ chol.T
    draws = sample_mvn(RngState(77), np.zeros(2), chol, n)
    assert np.all(np.abs(draws.mean(axis=0)) < 4 * np.sqrt(np.diag(cov) / n))
    emp_cov = np.cov(draws.T)
    assert np.max(np.abs(emp_cov - cov)) < 0.1


def test_mvn_identity_covariance_close():
    draws = sample_mvn(RngState(3), np.zeros(2), np.eye(2), 100_000)
    assert np.max(np.abs(np.cov(draws.T) - np.eye(2))) < 0.02


def test_mvn_zero_factor_returns_mean():
    mean = np.array([4.0, -2.0, 0.5])
    draws = sample_mvn(RngState(1), mean, np.zeros((3, 3)), 10)
    assert np.array_equal(draws, np.tile(mean, (10, 1)))


def test_mvn_single_draw_shape():
    draw = sample_mvn(RngState(5), np.array([1.0, 1.0]), np.eye(2), 1)
    assert draw.shape == (1, 2)
    assert np.all(np.isfinite(draw))


def test_mvn_rejects_mismatched_and_upper_triangular():
    with pytest.raises(ValueError):
        sample_mvn(RngState(0), np.zeros(2), np.eye(3), 4)
    with pytest.raises(ValueError):
        sample_mvn(RngState(0), np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]), 4)


def test_niw_sigma_mean_matches_inverse_wishart():
    """E[Sigma] = Psi0 / (nu0 - d - 1) for the Table-A1-style prior."""
    d = 5
    rng = RngState(321)
    sigmas = np.stack(
        [sample_niw(rng.substream(i), np.zeros(d), 5.0, np.eye(d), 10.0)[1] for i in range(10_000)]
    )
    assert np.max(np.abs(sigmas.mean(axis=0) - np.eye(d) / 4.0)) < 0.05


def test_niw_mu_concentrates_at_large_precision():
    d = 3
    mu0 = np.array([1.0, -1.0, 0.5])
    rng = RngState(9)
    mus = np.stack(
        [sample_niw(rng.substream(i), mu0, 1e9, np.eye(d), 7.0)[0] for i in range(100)]
    )
    assert np.max(np.abs(mus - mu0)) < 1e-3


def test_niw_draw_is_symmetric_positive_definite():
    mu, sigma = sample_niw(RngState(4), np.zeros(4), 2.0, np.eye(4), 6.0)
    assert np.array_equal(sigma, sigma.T)
    assert np.all(np.linalg.eigvalsh(sigma) > 0)


def test_niw_parameter_domains():
    with pytest.raises(ValueError):
        sample_niw(RngState(0), np.zeros(3), 0.0, np.eye(3), 5.0)
    with pytest.raises(ValueError):
        sample_niw(RngState(0), np.zeros(3), 1.0, np.eye(3), 2.0)
    with pytest.raises(Exception):
        sample_niw(RngState(0), np.zeros(2), 1.0, np.array([[1.0, 2.0], [2.0, 1.0]]), 5.0)

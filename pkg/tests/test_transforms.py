import math

import numpy as np
import pytest

from msbi.linalg import NotPositiveDefiniteError
from msbi.transforms import (
    CholeskyLogTransform,
    IdentityTransform,
    LogTransform,
    transform_from_dict,
    unvech,
    unvech_lower,
    vech,
)


def random_spd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T + d * np.eye(d)


def numerical_log_det(fn, x, h=1e-6):
    """log |det J| of fn at x via central differences, for square Jacobians."""
    n = x.shape[0]
    jac = np.empty((fn(x).shape[0], n))
    for j in range(n):
        hi = x.copy()
        lo = x.copy()
        hi[j] += h
        lo[j] -= h
        jac[:, j] = (fn(hi) - fn(lo)) / (2.0 * h)
    sign, logdet = np.linalg.slogdet(jac)
    assert sign != 0
    return logdet


def test_vech_row_major_order():
    a = np.array([[1.0, 2.0, 4.0], [2.0, 3.0, 5.0], [4.0, 5.0, 6.0]])
    assert np.array_equal(vech(a), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])


def test_unvech_restores_symmetric_matrix():
    rng = np.random.default_rng(0)
    for d in (1, 2, 3, 6):
        a = random_spd(rng, d)
        assert np.array_equal(unvech(vech(a), d), a)


def test_unvech_rejects_wrong_length():
    with pytest.raises(ValueError):
        unvech(np.zeros(4), 3)


def test_unvech_lower_keeps_strict_upper_zero():
    out = unvech_lower(np.array([1.0, 2.0, 3.0]), 2)
    assert np.array_equal(out, [[1.0, 0.0], [2.0, 3.0]])


def test_identity_is_noop_with_zero_log_det():
    t = IdentityTransform()
    theta = np.random.default_rng(1).standard_normal((5, 3))
    assert np.array_equal(t.to_unconstrained(theta), theta)
    assert np.array_equal(t.from_unconstrained(theta), theta)
    assert np.array_equal(t.log_det_jacobian(theta), np.zeros(5))


def test_log_transform_round_trip_and_log_det():
    t = LogTransform()
    theta = np.random.default_rng(2).uniform(0.1, 5.0, size=(6, 4))
    w = t.to_unconstrained(theta)
    assert np.allclose(t.from_unconstrained(w), theta, rtol=0, atol=1e-12)
    assert np.allclose(t.log_det_jacobian(theta), -np.log(theta).sum(axis=1))


def test_log_transform_matches_numerical_jacobian():
    t = LogTransform()
    theta = np.array([0.3, 1.7, 4.2])
    expected = numerical_log_det(lambda x: t.to_unconstrained(x[None])[0], theta)
    got = t.log_det_jacobian(theta[None])[0]
    assert abs(got - expected) < 1e-7


def test_log_transform_rejects_nonpositive():
    t = LogTransform()
    with pytest.raises(ValueError):
        t.to_unconstrained(np.array([[1.0, 0.0]]))
    with pytest.raises(ValueError):
        t.log_det_jacobian(np.array([[-1.0, 2.0]]))


@pytest.mark.parametrize("d", [1, 2, 3, 5])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_cholesky_log_round_trip(d, seed):
    rng = np.random.default_rng(seed)
    t = CholeskyLogTransform(dim=d)
    rows = []
    for _ in range(4):
        mean = rng.standard_normal(d)
        rows.append(np.concatenate([mean, vech(random_spd(rng, d))]))
    theta = np.stack(rows)
    w = t.to_unconstrained(theta)
    back = t.from_unconstrained(w)
    assert np.allclose(back, theta, rtol=0, atol=1e-10)
    # and the reverse composition
    assert np.allclose(t.to_unconstrained(back), w, rtol=0, atol=1e-10)


@pytest.mark.parametrize("d", [2, 3])
def test_cholesky_log_det_matches_numerical_jacobian(d):
    """The covariance block's Jacobian; the mean block is an identity."""
    rng = np.random.default_rng(7)
    t = CholeskyLogTransform(dim=d)
    for _ in range(5):
        theta = np.concatenate([rng.standard_normal(d), vech(random_spd(rng, d))])

        def fn(x):
            return t.to_unconstrained(x[None])[0]

        expected = numerical_log_det(fn, theta)
        got = t.log_det_jacobian(theta[None])[0]
        assert abs(got - expected) < 1e-5


def test_cholesky_log_det_d1_closed_form():
    t = CholeskyLogTransform(dim=1)
    var = 2.5
    theta = np.array([[0.0, var]])
    expected = -math.log(2.0) - math.log(var)
    assert abs(t.log_det_jacobian(theta)[0] - expected) < 1e-12


def test_cholesky_log_rejects_non_spd_and_bad_width():
    t = CholeskyLogTransform(dim=2)
    with pytest.raises(NotPositiveDefiniteError):
        t.to_unconstrained(np.array([[0.0, 0.0, 1.0, 2.0, 1.0]]))
    with pytest.raises(ValueError):
        t.to_unconstrained(np.zeros((1, 4)))
    with pytest.raises(ValueError):
        CholeskyLogTransform(dim=0)


def test_unconstrained_side_accepts_any_reals():
    t = CholeskyLogTransform(dim=2)
    w = np.array([[0.3, -1.2, -2.0, 0.7, 1.1]])
    theta = t.from_unconstrained(w)
    cov = unvech(theta[0, 2:], 2)
    assert np.all(np.linalg.eigvalsh(cov) > 0)


def test_transform_dict_round_trip():
    for t in (IdentityTransform(), LogTransform(), CholeskyLogTransform(dim=3)):
        clone = transform_from_dict(t.to_dict())
        assert type(clone) is type(t)
    assert transform_from_dict({"kind": "cholesky_log", "dim": 3}).dim == 3
    with pytest.raises(ValueError):
        transform_from_dict({"kind": "affine"})

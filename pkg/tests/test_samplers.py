import numpy as np
import pytest
from scipy import stats

from aspr.core.samplers import (
    NotPositiveDefiniteError,
    RngStream,
    SpdMatrix,
    de_logpdf,
    gamma_sample,
    inv_wishart_sample,
    inverse_gaussian_sample,
    mvn_logpdf,
    mvn_sample,
    niw_sample,
    trunc_normal_sample,
)

COV = np.array([[2.0, 0.6], [0.6, 1.0]])


def within_se(draws, target, k=4.0):
    draws = np.asarray(draws)
    se = draws.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
    return np.all(np.abs(draws.mean(axis=0) - target) <= k * se)


def test_rng_stream_is_reproducible_and_children_differ():
    stream = RngStream(7)
    first = stream.generator().standard_normal(5)
    again = RngStream(7).generator().standard_normal(5)
    np.testing.assert_array_equal(first, again)
    child_a = stream.child(0).generator().standard_normal(5)
    child_b = stream.child(1).generator().standard_normal(5)
    assert not np.allclose(child_a, child_b)
    assert stream.child(3).key == (3,)


def test_spd_matrix_rejects_bad_input():
    with pytest.raises(NotPositiveDefiniteError) as info:
        SpdMatrix(np.array([[1.0, 2.0], [2.0, 1.0]]))
    assert info.value.matrix.shape == (2, 2)
    with pytest.raises(NotPositiveDefiniteError):
        SpdMatrix(np.array([[1.0, 0.5], [0.4, 1.0]]))
    spd = SpdMatrix(COV)
    np.testing.assert_allclose(spd.chol @ spd.chol.T, COV)
    assert spd.logdet() == pytest.approx(np.log(np.linalg.det(COV)))


def test_mvn_logpdf_matches_scipy():
    points = np.array([[0.1, -0.3], [2.0, 1.5], [-1.0, 0.0]])
    mean = np.array([0.5, -0.2])
    expected = stats.multivariate_normal(mean, COV).logpdf(points)
    np.testing.assert_allclose(mvn_logpdf(points, mean, COV), expected, rtol=1e-12)
    assert isinstance(mvn_logpdf(points[0], mean, COV), float)


def test_mvn_sample_moments(rng):
    draws = np.array([mvn_sample([1.0, -1.0], COV, rng) for _ in range(20000)])
    assert within_se(draws, [1.0, -1.0])
    np.testing.assert_allclose(np.cov(draws, rowvar=False), COV, atol=0.08)


def test_inverse_wishart_mean(rng):
    df, scale = 9.0, SpdMatrix(COV)
    draws = np.array([inv_wishart_sample(df, scale, rng).values for _ in range(20000)])
    expected = COV / (df - 2 - 1)
    assert within_se(draws.reshape(len(draws), -1), expected.ravel())
    np.testing.assert_allclose(stats.invwishart(df=df, scale=COV).mean(), expected)


def test_inverse_wishart_rejects_small_df(rng):
    with pytest.raises(ValueError):
        inv_wishart_sample(1.0, COV, rng)


def test_niw_sample_shapes(rng):
    theta, sigma = niw_sample(np.zeros(2), 2.0, 5.0, COV, rng)
    assert theta.shape == (2,)
    assert sigma.dim == 2


@pytest.mark.parametrize("bound", [-1.0, 0.5, 6.0])
def test_truncated_normal_below_matches_scipy(rng, bound):
    draws = trunc_normal_sample(np.zeros(20000), 1.0, bound, "below", rng)
    assert np.all(draws > bound)
    assert within_se(draws, stats.truncnorm.mean(bound, np.inf))


def test_truncated_normal_above_with_location_and_scale(rng):
    draws = trunc_normal_sample(np.full(20000, 2.0), 3.0, 0.0, "above", rng)
    assert np.all(draws < 0.0)
    a, b = -np.inf, (0.0 - 2.0) / 3.0
    assert within_se(draws, stats.truncnorm.mean(a, b, loc=2.0, scale=3.0))
    assert isinstance(trunc_normal_sample(0.0, 1.0, 0.0, "above", rng), float)


def test_truncated_normal_rejects_unknown_side(rng):
    with pytest.raises(ValueError):
        trunc_normal_sample(0.0, 1.0, 0.0, "left", rng)


def test_gamma_sample_uses_shape_and_scale(rng):
    draws = gamma_sample(3.0, 0.5, rng, size=20000)
    assert within_se(draws, 1.5)
    with pytest.raises(ValueError):
        gamma_sample(0.0, 1.0, rng)


def test_inverse_gaussian_moments(rng):
    mu, lam = 1.5, 4.0
    draws = inverse_gaussian_sample(np.full(40000, mu), lam, rng)
    assert np.all(draws > 0)
    assert within_se(draws, mu)
    assert draws.var() == pytest.approx(mu**3 / lam, rel=0.07)


def test_de_logpdf_matches_laplace():
    x = np.linspace(-3, 3, 13)
    np.testing.assert_allclose(de_logpdf(x, 0.4, 2.5), stats.laplace.logpdf(x, loc=0.4, scale=1 / 2.5))

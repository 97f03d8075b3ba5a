import numpy as np
import pytest

from aspr.core.mixture_em import (
    EmCollapseError,
    em_fit,
    map_allocate,
    mixture_loglik,
    responsibilities,
    single_normal_loglik,
)


def two_groups(rng, n=1000, weight=0.2):
    z = rng.uniform(size=n) < weight
    Y = np.where(
        z[:, None],
        rng.multivariate_normal([0.0, 0.0], [[1.0, 0.3], [0.3, 1.0]], size=n),
        rng.multivariate_normal([6.0, 8.0], [[2.0, -0.4], [-0.4, 1.5]], size=n),
    )
    return Y, z.astype(int)


def test_loglik_trace_is_monotone(rng):
    for _ in range(100):
        n = int(rng.integers(40, 120))
        Y = rng.standard_normal((n, 2)) @ np.array([[1.0, 0.3], [0.0, rng.uniform(0.5, 2.0)]])
        Y[: n // 4] += rng.uniform(1.0, 4.0)
        fit = em_fit(Y, n_restarts=3, rng=rng)
        steps = np.diff(fit.loglik_trace)
        assert np.all(steps >= -1e-8 * np.abs(fit.loglik_trace[:-1]).max())


def test_recovers_well_separated_components(rng):
    Y, z = two_groups(rng)
    fit = em_fit(Y, rng=rng)
    adverse, healthy = fit.components
    assert fit.converged
    assert fit.weight == pytest.approx(z.mean(), abs=0.02)
    np.testing.assert_allclose(healthy.theta, [6.0, 8.0], rtol=0.05)
    np.testing.assert_allclose(adverse.theta, [0.0, 0.0], atol=0.15)
    np.testing.assert_allclose(healthy.sigma.values, [[2.0, -0.4], [-0.4, 1.5]], atol=0.2)
    assert np.mean(map_allocate(fit) == z) > 0.99


def test_minority_component_comes_first(rng):
    Y, _ = two_groups(rng, weight=0.8)
    fit = em_fit(Y, rng=rng)
    assert fit.weight <= 0.5
    assert fit.components[0].theta[0] > 3.0
    np.testing.assert_allclose(fit.responsibilities.sum(axis=1), 1.0)


def test_mixture_beats_single_normal(rng):
    Y, _ = two_groups(rng, n=400)
    fit = em_fit(Y, rng=rng)
    assert mixture_loglik(Y, fit.components, fit.weight) > single_normal_loglik(Y)


def test_seeded_fit_is_deterministic():
    Y, _ = two_groups(np.random.default_rng(3), n=300)
    first = em_fit(Y, rng=np.random.default_rng(11))
    second = em_fit(Y, rng=np.random.default_rng(11))
    np.testing.assert_array_equal(first.loglik_trace, second.loglik_trace)


def test_rejects_small_or_missing_data(rng):
    with pytest.raises(ValueError):
        em_fit(rng.standard_normal((6, 2)))
    Y = rng.standard_normal((50, 2))
    Y[3, 1] = np.nan
    with pytest.raises(ValueError):
        em_fit(Y)


def test_degenerate_data_collapses(rng):
    with pytest.raises(EmCollapseError):
        em_fit(np.ones((30, 2)), n_restarts=3, rng=rng)


def test_capped_fit_returns_responsibilities_of_final_parameters(rng):
    Y = np.vstack([rng.normal(0.0, 1.0, size=(60, 2)), rng.normal(2.5, 1.0, size=(140, 2))])
    fit = em_fit(Y, n_restarts=1, tol=1e-14, max_iter=3, rng=rng)
    assert not fit.converged
    assert fit.n_iter == 3
    np.testing.assert_allclose(responsibilities(Y, fit.components, fit.weight), fit.responsibilities, atol=1e-12)
    assert fit.loglik == pytest.approx(mixture_loglik(Y, fit.components, fit.weight), abs=1e-4)

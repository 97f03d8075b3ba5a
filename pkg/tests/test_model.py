import numpy as np
import pytest
from scipy import stats
from scipy.special import expit

from aspr.core.mixture_em import ComponentParams
from aspr.core.model import (
    T_NU,
    T_SIGMA2,
    AsprData,
    ChainConfig,
    ChainState,
    adverse_probability,
    baseline_probability_interval,
    default_priors,
    gibbs_step_augment_g,
    gibbs_step_components,
    gibbs_step_update_phi,
    logistic_t_cdf_distance,
    niw_posterior,
    omega1,
    run_chain,
    t_approximation_sigma2,
    with_interactions,
)
from aspr.core.msp import CoefState, MspConfig, msp_init
from aspr.core.samplers import SpdMatrix


def mixture_data(rng, n=200, p=3, beta=None):
    X = rng.binomial(1, 0.3, size=(n, p)).astype(float)
    beta = np.zeros(p) if beta is None else np.asarray(beta)
    z = (rng.uniform(size=n) < expit(-1.8 + X @ beta)).astype(int)
    Y = np.where(
        z[:, None] == 1,
        rng.multivariate_normal([-3.0, -3.0], [[1.0, 0.2], [0.2, 1.0]], size=n),
        rng.multivariate_normal([1.0, 1.0], [[0.5, 0.1], [0.1, 0.5]], size=n),
    )
    return AsprData.from_arrays(Y, X), z


def bare_state(data, rng, z=None, gamma=0.0):
    return ChainState(
        components=(
            ComponentParams(np.zeros(data.s), np.eye(data.s)),
            ComponentParams(np.ones(data.s), np.eye(data.s)),
        ),
        z=np.zeros(data.n, dtype=int) if z is None else z,
        g=np.zeros(data.n),
        phi=np.ones(data.n),
        coef=CoefState(gamma=gamma, beta=np.zeros(data.p)),
        msp=msp_init(MspConfig(truncation=5), data.p, rng),
    )


def test_t_scale_constant_and_cdf_distance():
    assert T_SIGMA2 == pytest.approx(np.pi**2 * (7.3 - 2) / (3 * 7.3))
    assert T_SIGMA2 == pytest.approx(2.3886, abs=1e-4)
    assert logistic_t_cdf_distance(T_NU, T_SIGMA2) < 0.01
    assert logistic_t_cdf_distance(T_NU, t_approximation_sigma2(T_NU, denominator=2.0)) >= 0.01


def test_intercept_prior_reproduces_baseline_elicitation(rng):
    median, lower, upper = baseline_probability_interval(-2.20, 2.42)
    assert median == pytest.approx(0.100, abs=0.002)
    assert 0.025 < lower < upper < 0.32
    draws = expit(rng.normal(-2.20, 1 / np.sqrt(2.42), size=10**6))
    assert np.median(draws) == pytest.approx(0.100, abs=0.002)
    lo, hi = np.quantile(draws, [0.025, 0.975])
    assert 0.025 < lo and hi < 0.32


def test_data_centers_predictors_and_keeps_offsets():
    X = np.array([[1.0, 0.0], [0.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    data = AsprData.from_arrays(np.arange(8.0).reshape(4, 2), X, predictor_names=["a", "b"])
    np.testing.assert_allclose(data.X.mean(axis=0), 0.0)
    np.testing.assert_allclose(data.x_offsets, [0.5, 0.5])
    np.testing.assert_allclose(data.raw_predictors(), X)
    assert data.outcome_names == ["y1", "y2"]
    with pytest.raises(ValueError):
        AsprData.from_arrays(np.zeros((4, 2)), X, predictor_names=["a"])
    with pytest.raises(ValueError):
        AsprData.from_arrays(np.array([[1.0, np.nan], [0.0, 1.0]]))


def test_interactions_append_product_columns():
    X = np.array([[1.0, 2.0, 0.0], [3.0, 1.0, 1.0]])
    wide, names = with_interactions(X, ["snp1", "snp2", "smoke"], [("snp1", "smoke")])
    assert names[-1] == "snp1*smoke"
    np.testing.assert_allclose(wide[:, -1], [0.0, 3.0])
    with pytest.raises(ValueError):
        with_interactions(X, ["snp1", "snp2", "smoke"], [("snp1", "age")])


def test_default_priors_are_empirical_bayes(rng):
    data, _ = mixture_data(rng)
    priors = default_priors(data)
    np.testing.assert_allclose(priors.theta0, data.Y.mean(axis=0))
    np.testing.assert_allclose(priors.sigma0.values, np.cov(data.Y, rowvar=False))
    assert priors.psi0 == 1.0 and priors.rho0 == data.s + 2
    assert (priors.gamma0, priors.lambda0) == (-2.20, 2.42)
    assert priors.mode == "full-bayes"
    updated = priors.with_overrides({"gamma0": -1.0, "truncation": 10})
    assert updated.gamma0 == -1.0 and updated.msp.truncation == 10
    with pytest.raises(ValueError):
        priors.with_overrides({"gamma": 1.0})
    constant = AsprData.from_arrays(np.column_stack([np.ones(10), np.arange(10.0)]))
    with pytest.raises(ValueError):
        default_priors(constant)


def test_chain_bookkeeping():
    config = ChainConfig(n_iter=11000, burn_in=1000, thin=10)
    assert config.n_stored == 1000
    assert sum(config.is_stored(k) for k in range(config.n_iter)) == 1000
    with pytest.raises(ValueError):
        ChainConfig(n_iter=10, burn_in=10)


def test_chain_config_from_dict():
    config = ChainConfig.from_dict({"n_iter": "60", "burn_in": 10, "z_link": "t"})
    assert (config.n_iter, config.burn_in, config.thin, config.z_link) == (60, 10, 10, "t")
    assert ChainConfig.from_dict(config.to_dict()) == config
    with pytest.raises(ValueError, match="burnin"):
        ChainConfig.from_dict({"n_iter": 60, "burnin": 10})


def test_omega_is_logistic_and_monotone():
    coef = CoefState(gamma=-1.0, beta=np.array([0.5, -0.25]))
    x = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    values = omega1(x, coef)
    assert np.all(np.diff(values) > 0)
    np.testing.assert_allclose(values + expit(-(coef.gamma + x @ coef.beta)), 1.0)


def test_component_step_matches_niw_posterior(rng):
    data, z = mixture_data(rng, n=200, p=1)
    priors = default_priors(data)
    state = bare_state(data, rng, z=z)
    draws_theta, draws_sigma = [], []
    for _ in range(4000):
        gibbs_step_components(state, data, priors, rng)
        draws_theta.append(state.components[0].theta)
        draws_sigma.append(state.components[0].sigma.values.ravel())
    theta_hat, psi_hat, rho_hat, sigma_hat = niw_posterior(data.Y[z == 1], priors)
    draws_theta, draws_sigma = np.array(draws_theta), np.array(draws_sigma)
    se_t = draws_theta.std(axis=0) / np.sqrt(len(draws_theta))
    assert np.all(np.abs(draws_theta.mean(axis=0) - theta_hat) < 4 * se_t)
    expected_sigma = sigma_hat / (rho_hat - data.s - 1)
    se_s = draws_sigma.std(axis=0) / np.sqrt(len(draws_sigma))
    assert np.all(np.abs(draws_sigma.mean(axis=0) - expected_sigma.ravel()) < 4 * se_s)


def test_phi_step_matches_gamma_conditional(rng):
    data, _ = mixture_data(rng, n=10, p=0)
    state = bare_state(data, rng, gamma=0.3)
    state.g = np.linspace(-3, 3, data.n)
    draws = np.array([gibbs_step_update_phi(state, data, rng).phi.copy() for _ in range(20000)])
    resid2 = (state.g - 0.3) ** 2
    shape, scale = (T_NU + 1) / 2, 2 / (T_NU + resid2 / T_SIGMA2)
    se = draws.std(axis=0) / np.sqrt(len(draws))
    assert np.all(np.abs(draws.mean(axis=0) - shape * scale) < 4 * se)
    np.testing.assert_allclose(draws.var(axis=0), shape * scale**2, rtol=0.06)


def test_augmentation_reproduces_t_marginal(rng):
    # Independent chains over (z, g, phi) at a fixed linear predictor.
    n, eta = 20000, 0.7
    data = AsprData.from_arrays(rng.standard_normal((n, 1)))
    state = bare_state(data, rng, gamma=eta)
    for _ in range(40):
        p_adverse = stats.norm.cdf(eta * np.sqrt(state.phi / T_SIGMA2))
        state.z = (rng.uniform(size=n) < p_adverse).astype(int)
        gibbs_step_augment_g(state, data, rng)
        gibbs_step_update_phi(state, data, rng)
    for q in (0.1, 0.25, 0.5, 0.75, 0.9):
        cut = eta + np.sqrt(T_SIGMA2) * stats.t.ppf(q, T_NU)
        assert abs(np.mean(state.g <= cut) - q) < 4 * np.sqrt(q * (1 - q) / n)


def test_adverse_probability_matches_direct_formula(rng):
    data, _ = mixture_data(rng, n=30, p=2)
    state = bare_state(data, rng, gamma=-0.5)
    state.coef.beta = np.array([0.3, -0.2])
    eta = -0.5 + data.X @ state.coef.beta
    adverse = expit(eta) * stats.multivariate_normal(np.zeros(2), np.eye(2)).pdf(data.Y)
    healthy = expit(-eta) * stats.multivariate_normal(np.ones(2), np.eye(2)).pdf(data.Y)
    np.testing.assert_allclose(adverse_probability(state, data), adverse / (adverse + healthy), rtol=1e-10)


def test_run_chain_shapes_and_reproducibility(rng):
    data, _ = mixture_data(rng, n=60, p=3)
    priors = default_priors(data, MspConfig(truncation=5))
    config = ChainConfig(n_iter=60, burn_in=10, thin=5, seed=4)
    first = run_chain(data, priors, config)
    second = run_chain(data, priors, config)
    assert first.n_draws == 10
    assert first.theta.shape == (10, 2, 2) and first.sigma.shape == (10, 2, 2, 2)
    assert first.beta.shape == (10, 3) and first.z.shape == (10, 60)
    assert first.minority_fraction.shape == (60,)
    np.testing.assert_array_equal(first.beta, second.beta)
    np.testing.assert_array_equal(first.sigma, second.sigma)
    assert first.to_frame(include_z=True).equals(second.to_frame(include_z=True))


def test_plugin_mode_keeps_components_fixed(rng):
    data, _ = mixture_data(rng, n=60, p=2)
    priors = default_priors(data)
    priors.plugin = (
        ComponentParams([-3.0, -3.0], [[1.0, 0.2], [0.2, 1.0]]),
        ComponentParams([1.0, 1.0], SpdMatrix([[0.5, 0.1], [0.1, 0.5]])),
    )
    assert priors.mode == "plugin"
    samples = run_chain(data, priors, ChainConfig(n_iter=30, burn_in=5, thin=5, seed=1))
    assert np.all(samples.theta == samples.theta[0])
    np.testing.assert_allclose(samples.theta[0, 0], [-3.0, -3.0])


def test_minority_label_is_stable(rng):
    data, z = mixture_data(rng, n=300, p=2, beta=[1.0, 0.0])
    priors = default_priors(data, MspConfig(truncation=10))
    samples = run_chain(data, priors, ChainConfig(n_iter=400, burn_in=100, thin=2, seed=9))
    assert samples.label_diagnostic() < 0.01
    assert abs(samples.minority_fraction[100:].mean() - z.mean()) < 0.05
    assert samples.theta[:, 0, 0].mean() < samples.theta[:, 1, 0].mean()

"""Adverse subpopulation regression: containers, priors and the Gibbs sampler."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from scipy import stats
from scipy.special import expit, log_expit, log_ndtr

from .mixture_em import ComponentParams, EmCollapseError, em_fit, map_allocate, responsibilities
from .msp import (
    CoefState,
    MspConfig,
    MspState,
    msp_init,
    update_assignments,
    update_atoms,
    update_coefficients,
    update_local_scales,
    update_sticks,
)
from .samplers import RngStream, SpdMatrix, gamma_sample, mvn_logpdf, niw_sample, trunc_normal_sample
from .summary import PosteriorSamples

LOGGER = logging.getLogger(__name__)

T_NU = 7.3


def t_approximation_sigma2(nu: float = T_NU, denominator: float = 3.0) -> float:
    """Scale of the t distribution matched to the logistic variance pi^2/3.

    ``denominator=2`` gives the 2*nu variant of the constant, whose CDF
    check fails.
    """

    return math.pi**2 * (nu - 2.0) / (denominator * nu)


T_SIGMA2 = t_approximation_sigma2()
Z_LINKS = ("logistic", "t")


def logistic_t_cdf_distance(nu: float = T_NU, sigma2: float = T_SIGMA2, grid: np.ndarray | None = None) -> float:
    """Sup-norm distance between the logistic CDF and the t_nu(0, sigma2) CDF."""

    if grid is None:
        grid = np.linspace(-10.0, 10.0, 4001)
    return float(np.max(np.abs(expit(grid) - stats.t.cdf(grid / math.sqrt(sigma2), nu))))


def baseline_probability_interval(gamma0: float, lambda0: float, level: float = 0.95) -> Tuple[float, float, float]:
    """Prior median and central interval of logistic(gamma), gamma ~ N(gamma0, 1/lambda0)."""

    sd = 1.0 / math.sqrt(lambda0)
    tail = 0.5 * (1.0 - level)
    lower, upper = stats.norm.ppf([tail, 1.0 - tail], loc=gamma0, scale=sd)
    return float(expit(gamma0)), float(expit(lower)), float(expit(upper))


@dataclass
class AsprData:
    """Outcomes Y (n x s) and centered predictors X (n x p)."""

    Y: np.ndarray
    X: np.ndarray
    outcome_names: List[str]
    predictor_names: List[str]
    x_offsets: np.ndarray

    @classmethod
    def from_arrays(
        cls,
        Y: np.ndarray,
        X: np.ndarray | None = None,
        outcome_names: Sequence[str] | None = None,
        predictor_names: Sequence[str] | None = None,
    ) -> "AsprData":
        Y = np.asarray(Y, dtype=float)
        if Y.ndim == 1:
            Y = Y[:, None]
        n, s = Y.shape
        X = np.zeros((n, 0)) if X is None else np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.shape[0] != n:
            raise ValueError(f"outcomes have {n} rows but predictors have {X.shape[0]}")
        if not (np.all(np.isfinite(Y)) and np.all(np.isfinite(X))):
            raise ValueError("data contain missing or non-finite values")
        outcome_names = list(outcome_names) if outcome_names is not None else [f"y{k + 1}" for k in range(s)]
        predictor_names = (
            list(predictor_names) if predictor_names is not None else [f"x{j + 1}" for j in range(X.shape[1])]
        )
        if len(outcome_names) != s or len(predictor_names) != X.shape[1]:
            raise ValueError("column names do not match the data dimensions")
        offsets = X.mean(axis=0) if X.shape[1] else np.zeros(0)
        return cls(Y=Y, X=X - offsets, outcome_names=outcome_names, predictor_names=predictor_names, x_offsets=offsets)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def s(self) -> int:
        return self.Y.shape[1]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def raw_predictors(self) -> np.ndarray:
        return self.X + self.x_offsets


def with_interactions(
    X: np.ndarray, names: Sequence[str], pairs: Sequence[Tuple[str, str]]
) -> Tuple[np.ndarray, List[str]]:
    """Append product columns ``a*b`` for each named pair."""

    index = {name: j for j, name in enumerate(names)}
    columns = [np.asarray(X, dtype=float)]
    out_names = list(names)
    for first, second in pairs:
        if first not in index or second not in index:
            missing = first if first not in index else second
            raise ValueError(f"interaction refers to unknown predictor {missing!r}")
        columns.append((X[:, index[first]] * X[:, index[second]])[:, None])
        out_names.append(f"{first}*{second}")
    return np.hstack(columns), out_names


@dataclass
class AsprPriors:
    theta0: np.ndarray
    psi0: float
    rho0: float
    sigma0: SpdMatrix
    gamma0: float = -2.20
    lambda0: float = 2.42  # precision of the intercept prior
    msp: MspConfig = field(default_factory=MspConfig)
    plugin: Tuple[ComponentParams, ComponentParams] | None = None

    def __post_init__(self) -> None:
        self.theta0 = np.atleast_1d(np.asarray(self.theta0, dtype=float))
        if not isinstance(self.sigma0, SpdMatrix):
            self.sigma0 = SpdMatrix(self.sigma0)
        s = self.theta0.shape[0]
        if self.psi0 <= 0:
            raise ValueError(f"psi0 must be positive, got {self.psi0}")
        if self.rho0 <= s - 1:
            raise ValueError(f"rho0 must exceed {s - 1}, got {self.rho0}")
        if self.lambda0 <= 0:
            raise ValueError(f"lambda0 must be positive, got {self.lambda0}")

    @property
    def mode(self) -> str:
        return "full-bayes" if self.plugin is None else "plugin"

    def with_overrides(self, payload: Dict[str, Any]) -> "AsprPriors":
        scalar = {"gamma0", "lambda0", "psi0", "rho0"}
        msp_keys = {f.name for f in fields(MspConfig)}
        unknown = set(payload) - scalar - msp_keys
        if unknown:
            raise ValueError(f"unknown prior settings: {sorted(unknown)}")
        msp_payload = {key: value for key, value in payload.items() if key in msp_keys}
        msp = MspConfig.from_dict({**vars(self.msp), **msp_payload}) if msp_payload else self.msp
        updates = {key: float(payload[key]) for key in scalar & set(payload)}
        return replace(self, msp=msp, **updates)


def default_priors(data: AsprData, msp: MspConfig | None = None) -> AsprPriors:
    """Empirical-Bayes NIW hyperparameters plus the informative intercept prior."""

    n, s = data.Y.shape
    if n <= s + 2:
        raise ValueError(f"need more than {s + 2} subjects, got {n}")
    variances = data.Y.var(axis=0)
    if np.any(variances == 0):
        constant = [data.outcome_names[k] for k in np.flatnonzero(variances == 0)]
        raise ValueError(f"outcome columns with zero variance: {constant}")
    return AsprPriors(
        theta0=data.Y.mean(axis=0),
        psi0=1.0,
        rho0=s + 2.0,
        sigma0=SpdMatrix(np.atleast_2d(np.cov(data.Y, rowvar=False))),
        msp=msp or MspConfig(),
    )


@dataclass
class ChainConfig:
    n_iter: int = 11000
    burn_in: int = 1000
    thin: int = 10
    seed: int = 0
    # Passes of the (g, phi) augmentation per sweep.
    augment_passes: int = 1
    # "logistic" imputes z with the logistic weight; "t" uses the t link given phi.
    z_link: str = "logistic"

    def __post_init__(self) -> None:
        if not 0 <= self.burn_in < self.n_iter:
            raise ValueError(f"burn-in {self.burn_in} must be below the number of iterations {self.n_iter}")
        if self.thin < 1:
            raise ValueError(f"thin must be at least 1, got {self.thin}")
        if self.augment_passes < 1:
            raise ValueError("augment_passes must be at least 1")
        if self.z_link not in Z_LINKS:
            raise ValueError(f"z_link must be one of {Z_LINKS}, got {self.z_link!r}")

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "ChainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown chain settings: {sorted(unknown)}")
        return cls(**{key: (str(value) if key == "z_link" else int(value)) for key, value in payload.items()})

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @property
    def n_stored(self) -> int:
        return (self.n_iter - self.burn_in) // self.thin

    def is_stored(self, iteration: int) -> bool:
        return iteration >= self.burn_in and (iteration - self.burn_in) % self.thin == self.thin - 1


@dataclass
class ChainState:
    """All latent quantities at one iteration. Component 0 is adverse (z = 1)."""

    components: Tuple[ComponentParams, ComponentParams]
    z: np.ndarray
    g: np.ndarray
    phi: np.ndarray
    coef: CoefState
    msp: MspState


def omega1(x: np.ndarray, coef: CoefState) -> float | np.ndarray:
    """Adverse-membership probability logistic(gamma + x'beta)."""

    eta = coef.gamma + np.asarray(x, dtype=float) @ coef.beta
    return expit(eta)


def linear_predictor(state: ChainState, data: AsprData) -> np.ndarray:
    return state.coef.gamma + data.X @ state.coef.beta


def niw_posterior(
    Y_h: np.ndarray, priors: AsprPriors
) -> Tuple[np.ndarray, float, float, np.ndarray]:
    """Conjugate NIW update for the subjects currently in one component."""

    n_h = Y_h.shape[0]
    if n_h == 0:
        return priors.theta0.copy(), priors.psi0, priors.rho0, priors.sigma0.values.copy()
    ybar = Y_h.mean(axis=0)
    dev = Y_h - ybar
    scatter = dev.T @ dev
    shift = ybar - priors.theta0
    theta_hat = (n_h * ybar + priors.psi0 * priors.theta0) / (n_h + priors.psi0)
    sigma_hat = priors.sigma0.values + scatter + n_h / (1.0 + n_h / priors.psi0) * np.outer(shift, shift)
    return theta_hat, n_h + priors.psi0, n_h + priors.rho0, sigma_hat


def gibbs_step_components(
    state: ChainState, data: AsprData, priors: AsprPriors, rng: np.random.Generator
) -> ChainState:
    """Step (a): draw (theta_h, Sigma_h) from their NIW full conditionals."""

    if priors.plugin is not None:
        return state
    drawn = []
    for mask in (state.z == 1, state.z == 0):
        theta_hat, psi_hat, rho_hat, sigma_hat = niw_posterior(data.Y[mask], priors)
        theta, sigma = niw_sample(theta_hat, psi_hat, rho_hat, SpdMatrix(sigma_hat), rng)
        drawn.append(ComponentParams(theta, sigma))
    state.components = (drawn[0], drawn[1])
    return state


def adverse_probability(
    state: ChainState, data: AsprData, link: str = "logistic", sigma2: float = T_SIGMA2
) -> np.ndarray:
    """Pr(z_i = 1 | y_i, x_i, parameters), computed in log space.

    With ``link="t"`` the prior weight is Pr(g_i > 0 | phi_i), the exact
    conditional of the augmented t model with g marginalized.
    """

    eta = linear_predictor(state, data)
    adverse, healthy = state.components
    if link == "t":
        scaled = eta * np.sqrt(state.phi / sigma2)
        prior_adverse, prior_healthy = log_ndtr(scaled), log_ndtr(-scaled)
    else:
        prior_adverse, prior_healthy = log_expit(eta), log_expit(-eta)
    log_adverse = prior_adverse + component_logpdf(data.Y, adverse)
    log_healthy = prior_healthy + component_logpdf(data.Y, healthy)
    return expit(log_adverse - log_healthy)


def component_logpdf(Y: np.ndarray, component: ComponentParams) -> np.ndarray:
    return np.atleast_1d(mvn_logpdf(Y, component.theta, component.sigma))


def gibbs_step_impute_z(
    state: ChainState, data: AsprData, rng: np.random.Generator, link: str = "logistic"
) -> ChainState:
    """Step (b): z_i ~ Bernoulli of the adverse posterior probability."""

    state.z = (rng.uniform(size=data.n) < adverse_probability(state, data, link)).astype(int)
    return state


def gibbs_step_augment_g(
    state: ChainState, data: AsprData, rng: np.random.Generator, sigma2: float = T_SIGMA2
) -> ChainState:
    """Step (c): g_i ~ N(eta_i, sigma2/phi_i) truncated to the side given by z_i."""

    eta = linear_predictor(state, data)
    sd = np.sqrt(sigma2 / state.phi)
    g = np.empty(data.n)
    adverse = state.z == 1
    g[adverse] = trunc_normal_sample(eta[adverse], sd[adverse], 0.0, "below", rng)
    g[~adverse] = trunc_normal_sample(eta[~adverse], sd[~adverse], 0.0, "above", rng)
    state.g = g
    return state


def gibbs_step_update_phi(
    state: ChainState, data: AsprData, rng: np.random.Generator, nu: float = T_NU, sigma2: float = T_SIGMA2
) -> ChainState:
    """Step (d): phi_i ~ Gamma((nu+1)/2, scale 2/(nu + r_i^2/sigma2))."""

    resid = state.g - linear_predictor(state, data)
    state.phi = np.atleast_1d(gamma_sample((nu + 1.0) / 2.0, 2.0 / (nu + resid**2 / sigma2), rng))
    return state


def gibbs_step_coefficients(
    state: ChainState, data: AsprData, priors: AsprPriors, rng: np.random.Generator, sigma2: float = T_SIGMA2
) -> ChainState:
    """Step (e): refresh the shrinkage prior state, then draw (gamma, beta) jointly."""

    beta = state.coef.beta
    msp = update_assignments(state.msp, beta, rng)
    msp = update_sticks(msp, priors.msp.alpha, rng)
    msp = update_atoms(msp, beta, priors.msp, rng)
    msp = update_local_scales(msp, beta, rng)
    state.msp = msp
    state.coef = update_coefficients(msp, state.g, state.phi, data.X, sigma2, (priors.gamma0, priors.lambda0), rng)
    return state


def gibbs_sweep(
    state: ChainState,
    data: AsprData,
    priors: AsprPriors,
    rng: np.random.Generator,
    augment_passes: int = 1,
    z_link: str = "logistic",
) -> ChainState:
    """One cycle of steps (a) through (e)."""

    gibbs_step_components(state, data, priors, rng)
    gibbs_step_impute_z(state, data, rng, z_link)
    for _ in range(augment_passes):
        gibbs_step_augment_g(state, data, rng)
        gibbs_step_update_phi(state, data, rng)
    gibbs_step_coefficients(state, data, priors, rng)
    return state


def initial_state(data: AsprData, priors: AsprPriors, rng: np.random.Generator) -> ChainState:
    """Start from an EM allocation of the subjects; g and phi from one augmentation pass."""

    coef = CoefState(gamma=priors.gamma0, beta=np.zeros(data.p))
    msp = msp_init(priors.msp, data.p, rng)
    if priors.plugin is not None:
        components = priors.plugin
        resp = responsibilities(data.Y, components, float(expit(priors.gamma0)))
        z = (resp[:, 0] > 0.5).astype(int)
    else:
        try:
            fit = em_fit(data.Y, n_restarts=3, rng=rng)
            components = fit.components
            z = map_allocate(fit)
        except (EmCollapseError, ValueError) as exc:
            LOGGER.warning("EM initialization failed (%s); starting from prior allocation", exc)
            components = (
                ComponentParams(priors.theta0, priors.sigma0),
                ComponentParams(priors.theta0, priors.sigma0),
            )
            z = (rng.uniform(size=data.n) < expit(priors.gamma0)).astype(int)
    state = ChainState(
        components=components,
        z=z,
        g=np.zeros(data.n),
        phi=np.ones(data.n),
        coef=coef,
        msp=msp,
    )
    gibbs_step_augment_g(state, data, rng)
    gibbs_step_update_phi(state, data, rng)
    return state


def run_chain(
    data: AsprData,
    priors: AsprPriors,
    config: ChainConfig,
    rng: np.random.Generator | None = None,
    state: ChainState | None = None,
    store_z: bool = True,
) -> PosteriorSamples:
    """Run the data-augmentation Gibbs sampler and keep thinned post-burn-in draws."""

    rng = rng or RngStream(config.seed).generator()
    state = state or initial_state(data, priors, rng)
    G, s, p = config.n_stored, data.s, data.p
    theta = np.empty((G, 2, s))
    sigma = np.empty((G, 2, s, s))
    gamma = np.empty(G)
    beta = np.empty((G, p))
    omega_bar = np.empty(G)
    z_draws = np.empty((G, data.n), dtype=np.int8) if store_z else None
    minority = np.empty(config.n_iter)
    tail_max = 0.0

    slot = 0
    for iteration in range(config.n_iter):
        gibbs_sweep(state, data, priors, rng, config.augment_passes, config.z_link)
        minority[iteration] = state.z.mean()
        tail_max = max(tail_max, state.msp.tail_weight)
        if config.is_stored(iteration):
            for h, comp in enumerate(state.components):
                theta[slot, h] = comp.theta
                sigma[slot, h] = comp.sigma.values
            gamma[slot] = state.coef.gamma
            beta[slot] = state.coef.beta
            omega_bar[slot] = float(np.mean(expit(linear_predictor(state, data))))
            if z_draws is not None:
                z_draws[slot] = state.z
            slot += 1
        if (iteration + 1) % 1000 == 0:
            LOGGER.info(
                "iteration %d: adverse fraction %.3f, stick tail weight %.2e",
                iteration + 1,
                minority[iteration],
                state.msp.tail_weight,
            )

    samples = PosteriorSamples(
        theta=theta,
        sigma=sigma,
        gamma=gamma,
        beta=beta,
        omega_bar=omega_bar,
        z=z_draws,
        minority_fraction=minority,
        burn_in=config.burn_in,
        outcome_names=list(data.outcome_names),
        predictor_names=list(data.predictor_names),
        x_offsets=data.x_offsets.copy(),
        tail_weight_max=tail_max,
    )
    diagnostic = samples.label_diagnostic()
    if diagnostic > 0.01:
        LOGGER.warning("adverse component held the majority in %.1f%% of post-burn-in iterations", 100 * diagnostic)
    if tail_max > 1e-6:
        LOGGER.warning("stick-breaking tail weight reached %.2e; consider a larger truncation level", tail_max)
    return samples


__all__ = [
    "T_NU",
    "T_SIGMA2",
    "Z_LINKS",
    "t_approximation_sigma2",
    "logistic_t_cdf_distance",
    "baseline_probability_interval",
    "AsprData",
    "AsprPriors",
    "ChainConfig",
    "ChainState",
    "with_interactions",
    "default_priors",
    "omega1",
    "linear_predictor",
    "niw_posterior",
    "adverse_probability",
    "gibbs_step_components",
    "gibbs_step_impute_z",
    "gibbs_step_augment_g",
    "gibbs_step_update_phi",
    "gibbs_step_coefficients",
    "gibbs_sweep",
    "initial_state",
    "run_chain",
]

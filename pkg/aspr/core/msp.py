"""Multiple shrinkage prior: truncated stick-breaking mixture of double exponentials.

The prior on each coefficient is beta_j ~ DE(mu_{c_j}, tau_{c_j}) with rate
parametrization, cluster 0 pinned at location zero, and stick-breaking weights.
Gaussian conditionals for the coefficients come from the scale-mixture form
beta_j | psi_j ~ N(mu_{c_j}, psi_j), psi_j ~ Exp(rate tau_{c_j}^2 / 2).
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Any, Dict, Tuple

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from .samplers import NotPositiveDefiniteError, de_logpdf, gamma_sample, inverse_gaussian_sample

# |beta_j - mu| below this draws the local scale from its prior.
DEGENERATE_GAP = 1e-12


@dataclass
class MspConfig:
    c: float = 0.0
    d: float = 0.1507  # variance of the atom-location prior
    a0: float = 30.0
    b0: float = 30.0
    a1: float = 6.5
    b1: float = 6.5
    alpha: float = 1.0
    truncation: int = 50

    def __post_init__(self) -> None:
        for name in ("d", "a0", "b0", "a1", "b1", "alpha"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if int(self.truncation) < 2:
            raise ValueError(f"truncation level must be at least 2, got {self.truncation}")
        self.truncation = int(self.truncation)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "MspConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown shrinkage prior settings: {sorted(unknown)}")
        kwargs = {key: (int(value) if key == "truncation" else float(value)) for key, value in payload.items()}
        return cls(**kwargs)


@dataclass
class MspState:
    """Atoms, sticks, weights, assignments and local scales of the prior."""

    mu: np.ndarray
    tau: np.ndarray
    sticks: np.ndarray
    weights: np.ndarray
    assignments: np.ndarray
    local_scales: np.ndarray

    @property
    def truncation(self) -> int:
        return self.mu.shape[0]

    @property
    def tail_weight(self) -> float:
        """Mass the truncation assigns to the last atom, prod_{l<T}(1 - V_l)."""

        return float(np.prod(1.0 - self.sticks[:-1]))

    def counts(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.truncation)

    def coefficient_means(self) -> np.ndarray:
        return self.mu[self.assignments]

    def check(self) -> None:
        if self.mu[0] != 0.0:
            raise AssertionError("zero-location atom moved")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise AssertionError("stick weights do not sum to one")
        if np.any(self.tau <= 0) or np.any(self.local_scales <= 0):
            raise AssertionError("non-positive scale parameter")

    def copy(self) -> "MspState":
        return MspState(*(np.array(getattr(self, f.name), copy=True) for f in fields(self)))


@dataclass
class CoefState:
    gamma: float
    beta: np.ndarray


def stick_weights(sticks: np.ndarray) -> np.ndarray:
    """pi_t = V_t prod_{l<t}(1 - V_l); the last weight absorbs the remainder."""

    remaining = np.concatenate([[1.0], np.cumprod(1.0 - sticks[:-1])])
    weights = sticks * remaining
    weights[-1] = max(0.0, 1.0 - weights[:-1].sum())
    return weights


def _draw_atoms(config: MspConfig, size: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    mu = rng.normal(config.c, np.sqrt(config.d), size=size)
    mu[0] = 0.0
    tau = np.empty(size)
    tau[0] = gamma_sample(config.a0, config.b0, rng)
    tau[1:] = gamma_sample(config.a1, config.b1, rng, size=size - 1)
    return mu, tau


def msp_init(config: MspConfig, p: int, rng: np.random.Generator) -> MspState:
    """Draw sticks and atoms from their priors with every coefficient in cluster 0."""

    if p < 0:
        raise ValueError(f"number of coefficients must be non-negative, got {p}")
    T = config.truncation
    sticks = rng.beta(1.0, config.alpha, size=T)
    sticks[-1] = 1.0
    mu, tau = _draw_atoms(config, T, rng)
    local_scales = rng.exponential(scale=2.0 / tau[0] ** 2, size=p)
    return MspState(
        mu=mu,
        tau=tau,
        sticks=sticks,
        weights=stick_weights(sticks),
        assignments=np.zeros(p, dtype=int),
        local_scales=local_scales,
    )


def draw_coefficients_from_prior(state: MspState, rng: np.random.Generator) -> np.ndarray:
    """Draw beta_j ~ DE(mu_{c_j}, tau_{c_j}) given the current assignments."""

    c = state.assignments
    return state.mu[c] + rng.laplace(0.0, 1.0 / state.tau[c], size=c.shape[0])


def update_assignments(state: MspState, beta: np.ndarray, rng: np.random.Generator) -> MspState:
    """Categorical draw of c_j with local scales marginalized, then redraw psi_j."""

    beta = np.asarray(beta, dtype=float)
    if beta.size:
        log_prob = np.log(np.maximum(state.weights, 1e-300))[None, :] + de_logpdf(
            beta[:, None], state.mu[None, :], state.tau[None, :]
        )
        log_prob -= logsumexp(log_prob, axis=1, keepdims=True)
        cumulative = np.cumsum(np.exp(log_prob), axis=1)
        u = rng.uniform(size=(beta.size, 1)) * cumulative[:, -1:]
        state.assignments = np.minimum((cumulative < u).sum(axis=1), state.truncation - 1)
    return update_local_scales(state, beta, rng)


def update_sticks(state: MspState, alpha: float, rng: np.random.Generator) -> MspState:
    """V_t ~ Beta(1 + n_t, alpha + sum_{l>t} n_l); V_T = 1."""

    counts = state.counts()
    after = np.concatenate([np.cumsum(counts[::-1])[::-1][1:], [0]])
    sticks = rng.beta(1.0 + counts[:-1], alpha + after[:-1])
    state.sticks = np.concatenate([sticks, [1.0]])
    state.weights = stick_weights(state.sticks)
    return state


def update_atoms(state: MspState, beta: np.ndarray, config: MspConfig, rng: np.random.Generator) -> MspState:
    """Gaussian update of mu_t (t >= 1) given local scales, then Gamma update of tau_t."""

    beta = np.asarray(beta, dtype=float)
    T = state.truncation
    c = state.assignments
    counts = state.counts()

    precision_sum = np.bincount(c, weights=1.0 / state.local_scales, minlength=T)
    weighted_sum = np.bincount(c, weights=beta / state.local_scales, minlength=T)
    post_prec = 1.0 / config.d + precision_sum
    post_mean = (config.c / config.d + weighted_sum) / post_prec
    mu = post_mean + rng.standard_normal(T) / np.sqrt(post_prec)
    mu[0] = 0.0
    state.mu = mu

    abs_dev = np.bincount(c, weights=np.abs(beta - mu[c]), minlength=T)
    shape = np.where(np.arange(T) == 0, config.a0, config.a1) + counts
    inv_scale = np.where(np.arange(T) == 0, 1.0 / config.b0, 1.0 / config.b1) + abs_dev
    state.tau = gamma_sample(shape, 1.0 / inv_scale, rng)
    return state


def update_local_scales(state: MspState, beta: np.ndarray, rng: np.random.Generator) -> MspState:
    """1/psi_j ~ InverseGaussian(tau / |beta_j - mu|, tau^2)."""

    beta = np.asarray(beta, dtype=float)
    c = state.assignments
    tau = state.tau[c]
    gap = np.abs(beta - state.mu[c])
    scales = np.empty(beta.shape[0])
    degenerate = gap < DEGENERATE_GAP
    if np.any(~degenerate):
        inv = inverse_gaussian_sample(tau[~degenerate] / gap[~degenerate], tau[~degenerate] ** 2, rng)
        scales[~degenerate] = 1.0 / np.atleast_1d(inv)
    if np.any(degenerate):
        scales[degenerate] = rng.exponential(scale=2.0 / tau[degenerate] ** 2)
    state.local_scales = scales
    return state


def update_coefficients(
    state: MspState,
    g: np.ndarray,
    phi: np.ndarray,
    X: np.ndarray,
    sigma2: float,
    gamma_prior: Tuple[float, float],
    rng: np.random.Generator,
) -> CoefState:
    """Joint Gaussian draw of (gamma, beta) for g_i ~ N(gamma + x_i'beta, sigma2 / phi_i)."""

    n = g.shape[0]
    design = np.column_stack([np.ones(n), X]) if X.size else np.ones((n, 1))
    w = np.asarray(phi, dtype=float) / sigma2
    gamma0, lambda0 = gamma_prior
    prior_prec = np.concatenate([[lambda0], 1.0 / state.local_scales])
    prior_mean = np.concatenate([[gamma0], state.coefficient_means()])

    precision = (design * w[:, None]).T @ design
    precision[np.diag_indices_from(precision)] += prior_prec
    rhs = design.T @ (w * g) + prior_prec * prior_mean
    try:
        chol = linalg.cholesky(precision, lower=True)
    except linalg.LinAlgError:
        precision[np.diag_indices_from(precision)] += 1e-10
        try:
            chol = linalg.cholesky(precision, lower=True)
        except linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(precision, "coefficient posterior precision is singular") from exc
    mean = linalg.cho_solve((chol, True), rhs)
    draw = mean + linalg.solve_triangular(chol.T, rng.standard_normal(mean.shape[0]), lower=False)
    return CoefState(gamma=float(draw[0]), beta=draw[1:])


def coefficient_posterior_moments(
    state: MspState, g: np.ndarray, phi: np.ndarray, X: np.ndarray, sigma2: float, gamma_prior: Tuple[float, float]
) -> Tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the Gaussian full conditional drawn by :func:`update_coefficients`."""

    n = g.shape[0]
    design = np.column_stack([np.ones(n), X]) if X.size else np.ones((n, 1))
    w = np.asarray(phi, dtype=float) / sigma2
    prior_prec = np.concatenate([[gamma_prior[1]], 1.0 / state.local_scales])
    prior_mean = np.concatenate([[gamma_prior[0]], state.coefficient_means()])
    precision = (design * w[:, None]).T @ design + np.diag(prior_prec)
    cov = np.linalg.inv(precision)
    return cov @ (design.T @ (w * g) + prior_prec * prior_mean), cov


__all__ = [
    "MspConfig",
    "MspState",
    "CoefState",
    "stick_weights",
    "msp_init",
    "draw_coefficients_from_prior",
    "update_assignments",
    "update_sticks",
    "update_atoms",
    "update_local_scales",
    "update_coefficients",
    "coefficient_posterior_moments",
]

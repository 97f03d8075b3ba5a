"""Seeded random variates and log densities used by the samplers."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Tuple

import numpy as np
from scipy import linalg
from scipy.special import ndtr, ndtri

LOG_2PI = float(np.log(2.0 * np.pi))

# Standardized bound above which the exponential-proposal rejection scheme is used.
TAIL_SWITCH = 4.0


class NotPositiveDefiniteError(ValueError):
    """Raised when a covariance matrix has no Cholesky factor."""

    def __init__(self, matrix: np.ndarray, message: str = "matrix is not positive definite") -> None:
        super().__init__(f"{message}:\n{np.array2string(np.asarray(matrix), precision=6)}")
        self.matrix = np.asarray(matrix)


@dataclass(frozen=True)
class RngStream:
    """Value-like handle for a reproducible random stream."""

    seed: int
    key: Tuple[int, ...] = ()

    def generator(self) -> np.random.Generator:
        sequence = np.random.SeedSequence(self.seed, spawn_key=self.key)
        return np.random.Generator(np.random.PCG64(sequence))

    def child(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.key + (int(index),))


@dataclass
class SpdMatrix:
    """Symmetric positive definite matrix with its lower Cholesky factor."""

    values: np.ndarray
    chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError(f"expected a square matrix, got shape {values.shape}")
        scale = max(float(np.max(np.abs(values))), 1.0)
        if np.max(np.abs(values - values.T)) > 1e-12 * scale:
            raise NotPositiveDefiniteError(values, "matrix is not symmetric")
        values = 0.5 * (values + values.T)
        try:
            chol = linalg.cholesky(values, lower=True)
        except linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError(values) from exc
        if not np.all(np.diag(chol) > 0):
            raise NotPositiveDefiniteError(values)
        self.values = values
        self.chol = chol

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))

    def whiten(self, deviations: np.ndarray) -> np.ndarray:
        """Return L^{-1} d for each row d of ``deviations``."""

        return linalg.solve_triangular(self.chol, np.asarray(deviations).T, lower=True).T

    def scaled(self, factor: float) -> "SpdMatrix":
        return SpdMatrix(self.values * factor)


def as_spd(matrix: SpdMatrix | np.ndarray) -> SpdMatrix:
    return matrix if isinstance(matrix, SpdMatrix) else SpdMatrix(np.asarray(matrix, dtype=float))


def mvn_sample(mean: np.ndarray, cov: SpdMatrix | np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw one vector from N_s(mean, cov)."""

    cov = as_spd(cov)
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if mean.shape[0] != cov.dim:
        raise ValueError(f"mean has length {mean.shape[0]} but covariance is {cov.dim}x{cov.dim}")
    return mean + cov.chol @ rng.standard_normal(cov.dim)


def mvn_logpdf(y: np.ndarray, mean: np.ndarray, cov: SpdMatrix | np.ndarray) -> float | np.ndarray:
    """Log density of N_s(mean, cov) at a point or at each row of a matrix."""

    cov = as_spd(cov)
    y = np.asarray(y, dtype=float)
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    if y.shape[-1] != cov.dim or mean.shape[0] != cov.dim:
        raise ValueError("dimension mismatch between point, mean and covariance")
    white = cov.whiten(np.atleast_2d(y) - mean)
    values = -0.5 * (cov.dim * LOG_2PI + cov.logdet()) - 0.5 * np.sum(white**2, axis=1)
    if y.ndim == 1:
        return float(values[0])
    return values


def inv_wishart_sample(df: float, scale: SpdMatrix | np.ndarray, rng: np.random.Generator) -> SpdMatrix:
    """Draw from IW(df, scale) through the Bartlett decomposition.

    With scale = L L^T and A the Bartlett factor of a standard Wishart draw,
    the result is (A^{-1} L^T)^T (A^{-1} L^T); only triangular solves are used.
    """

    scale = as_spd(scale)
    s = scale.dim
    if df <= s - 1:
        raise ValueError(f"inverse-Wishart degrees of freedom must exceed {s - 1}, got {df}")
    bartlett = np.zeros((s, s))
    bartlett[np.diag_indices(s)] = np.sqrt(rng.chisquare(df - np.arange(s)))
    lower = np.tril_indices(s, k=-1)
    bartlett[lower] = rng.standard_normal(len(lower[0]))
    factor = linalg.solve_triangular(bartlett, scale.chol.T, lower=True)
    draw = factor.T @ factor
    return SpdMatrix(0.5 * (draw + draw.T))


def niw_sample(
    theta0: np.ndarray,
    psi: float,
    rho: float,
    sigma0: SpdMatrix | np.ndarray,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, SpdMatrix]:
    """Draw (theta, Sigma) with Sigma ~ IW(rho, sigma0) and theta | Sigma ~ N(theta0, Sigma / psi)."""

    if psi <= 0:
        raise ValueError(f"psi must be positive, got {psi}")
    sigma = inv_wishart_sample(rho, sigma0, rng)
    theta = mvn_sample(theta0, SpdMatrix(sigma.values / psi), rng)
    return theta, sigma


def truncated_standard_normal(lower: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Standard normal draws restricted to (lower, inf), elementwise."""

    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    out = np.empty_like(lower)
    mild = lower <= TAIL_SWITCH
    if np.any(mild):
        u = 1.0 - rng.uniform(size=int(mild.sum()))
        # Phi(-x) = u * Phi(-a) keeps precision in the upper tail.
        out[mild] = -ndtri(u * ndtr(-lower[mild]))
    tail = np.flatnonzero(~mild)
    while tail.size:
        a = lower[tail]
        rate = 0.5 * (a + np.sqrt(a * a + 4.0))
        proposal = a + rng.exponential(size=tail.size) / rate
        accept = rng.uniform(size=tail.size) <= np.exp(-0.5 * (proposal - rate) ** 2)
        out[tail[accept]] = proposal[accept]
        tail = tail[~accept]
    return out


def trunc_normal_sample(
    mean: float | np.ndarray,
    sd: float | np.ndarray,
    bound: float | np.ndarray,
    side: Literal["above", "below"],
    rng: np.random.Generator,
) -> float | np.ndarray:
    """Draw from N(mean, sd^2) truncated above (x < bound) or below (x > bound)."""

    mean_arr, sd_arr, bound_arr = np.broadcast_arrays(
        np.asarray(mean, dtype=float), np.asarray(sd, dtype=float), np.asarray(bound, dtype=float)
    )
    if np.any(sd_arr <= 0):
        raise ValueError("sd must be positive")
    if side == "below":
        draws = mean_arr + sd_arr * truncated_standard_normal(((bound_arr - mean_arr) / sd_arr).ravel(), rng).reshape(mean_arr.shape)
    elif side == "above":
        draws = mean_arr - sd_arr * truncated_standard_normal(((mean_arr - bound_arr) / sd_arr).ravel(), rng).reshape(mean_arr.shape)
    else:
        raise ValueError(f"side must be 'above' or 'below', got {side!r}")
    if draws.ndim == 0:
        return float(draws)
    return draws


def gamma_sample(a: float | np.ndarray, b: float | np.ndarray, rng: np.random.Generator, size=None) -> float | np.ndarray:
    """Gamma draw with shape ``a`` and scale ``b`` (mean a*b)."""

    if np.any(np.asarray(a) <= 0) or np.any(np.asarray(b) <= 0):
        raise ValueError(f"gamma shape and scale must be positive, got a={a}, b={b}")
    return rng.gamma(shape=a, scale=b, size=size)


def inverse_gaussian_sample(
    mu: float | np.ndarray, lam: float | np.ndarray, rng: np.random.Generator
) -> float | np.ndarray:
    """Inverse Gaussian draw via the Michael-Schucany-Haas transformation."""

    mu_arr, lam_arr = np.broadcast_arrays(np.asarray(mu, dtype=float), np.asarray(lam, dtype=float))
    if np.any(mu_arr <= 0) or np.any(lam_arr <= 0):
        raise ValueError("inverse Gaussian mean and shape must be positive")
    v = rng.standard_normal(mu_arr.shape) ** 2
    muv = mu_arr * v
    x = mu_arr + mu_arr * muv / (2.0 * lam_arr) - mu_arr / (2.0 * lam_arr) * np.sqrt(
        4.0 * lam_arr * muv + muv * muv
    )
    # Guard against cancellation when mu*v >> lambda.
    x = np.maximum(x, np.finfo(float).tiny)
    u = rng.uniform(size=mu_arr.shape)
    draws = np.where(u <= mu_arr / (mu_arr + x), x, mu_arr * mu_arr / x)
    if draws.ndim == 0:
        return float(draws)
    return draws


def de_logpdf(x: float | np.ndarray, mu: float | np.ndarray, tau: float | np.ndarray) -> float | np.ndarray:
    """Double-exponential log density with rate ``tau``: log(tau/2) - tau|x - mu|."""

    tau_arr = np.asarray(tau, dtype=float)
    if np.any(tau_arr <= 0):
        raise ValueError("double-exponential rate must be positive")
    return np.log(tau_arr / 2.0) - tau_arr * np.abs(np.asarray(x, dtype=float) - mu)


__all__ = [
    "NotPositiveDefiniteError",
    "RngStream",
    "SpdMatrix",
    "as_spd",
    "mvn_sample",
    "mvn_logpdf",
    "inv_wishart_sample",
    "niw_sample",
    "truncated_standard_normal",
    "trunc_normal_sample",
    "gamma_sample",
    "inverse_gaussian_sample",
    "de_logpdf",
]

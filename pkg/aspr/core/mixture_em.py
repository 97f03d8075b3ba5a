"""Maximum-likelihood EM for a two-component multivariate normal mixture."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import List, Tuple

import numpy as np
from scipy.special import logsumexp

from .samplers import NotPositiveDefiniteError, SpdMatrix, mvn_logpdf

LOGGER = logging.getLogger(__name__)

RIDGE_FACTOR = 1e-8


class EmCollapseError(RuntimeError):
    """Raised when every EM restart collapses onto too few points."""


class _Collapsed(Exception):
    pass


@dataclass
class ComponentParams:
    """Mean vector and covariance of one mixture component."""

    theta: np.ndarray
    sigma: SpdMatrix

    def __post_init__(self) -> None:
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        if not isinstance(self.sigma, SpdMatrix):
            self.sigma = SpdMatrix(np.asarray(self.sigma, dtype=float))
        if self.sigma.dim != self.theta.shape[0]:
            raise ValueError("component mean and covariance dimensions differ")

    @property
    def dim(self) -> int:
        return self.theta.shape[0]


@dataclass
class MixtureFit:
    """Result of :func:`em_fit`. Component 0 is the adverse (minority) one."""

    components: Tuple[ComponentParams, ComponentParams]
    weight: float
    responsibilities: np.ndarray
    loglik_trace: np.ndarray
    converged: bool
    n_iter: int

    @property
    def loglik(self) -> float:
        return float(self.loglik_trace[-1])


def component_log_densities(
    Y: np.ndarray, components: Tuple[ComponentParams, ComponentParams], weight: float
) -> np.ndarray:
    """n x 2 matrix of log(weight_h) + log N(y_i | theta_h, Sigma_h)."""

    log_weights = np.log([weight, 1.0 - weight])
    return np.column_stack(
        [log_weights[h] + mvn_logpdf(Y, comp.theta, comp.sigma) for h, comp in enumerate(components)]
    )


def responsibilities(
    Y: np.ndarray, components: Tuple[ComponentParams, ComponentParams], weight: float
) -> np.ndarray:
    joint = component_log_densities(np.atleast_2d(Y), components, weight)
    return np.exp(joint - logsumexp(joint, axis=1, keepdims=True))


def mixture_loglik(Y: np.ndarray, components: Tuple[ComponentParams, ComponentParams], weight: float) -> float:
    return float(np.sum(logsumexp(component_log_densities(Y, components, weight), axis=1)))


def _ridge(Y: np.ndarray) -> float:
    s = Y.shape[1]
    return RIDGE_FACTOR * float(np.trace(np.atleast_2d(np.cov(Y, rowvar=False)))) / s


def _m_step(Y: np.ndarray, resp: np.ndarray, ridge: float) -> Tuple[Tuple[ComponentParams, ComponentParams], float]:
    n, s = Y.shape
    counts = resp.sum(axis=0)
    if np.any(counts < s + 2):
        raise _Collapsed(f"component effective sizes {counts}")
    comps: List[ComponentParams] = []
    for h in range(2):
        theta = resp[:, h] @ Y / counts[h]
        dev = Y - theta
        scatter = (dev * resp[:, h, None]).T @ dev
        try:
            sigma = SpdMatrix((scatter + ridge * np.eye(s)) / counts[h])
        except NotPositiveDefiniteError as exc:
            raise _Collapsed(str(exc)) from exc
        comps.append(ComponentParams(theta, sigma))
    return (comps[0], comps[1]), float(counts[0] / n)


def _penalty(components: Tuple[ComponentParams, ComponentParams], ridge: float) -> float:
    # The ridge is the MAP term -ridge/2 tr(Sigma^{-1}); keeping it in the
    # objective makes the recorded trace exactly monotone.
    total = 0.0
    for comp in components:
        inv_chol = np.linalg.inv(comp.sigma.chol)
        total += float(np.sum(inv_chol**2))
    return -0.5 * ridge * total


def _two_means(Y: np.ndarray, rng: np.random.Generator, n_steps: int = 20) -> np.ndarray:
    n = Y.shape[0]
    centers = Y[rng.choice(n, size=2, replace=False)].copy()
    labels = np.zeros(n, dtype=int)
    for _ in range(n_steps):
        dist = ((Y[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = np.argmin(dist, axis=1)
        for h in range(2):
            if np.any(labels == h):
                centers[h] = Y[labels == h].mean(axis=0)
    return labels


def _single_run(
    Y: np.ndarray, tol: float, max_iter: int, ridge: float, rng: np.random.Generator
) -> MixtureFit:
    n = Y.shape[0]
    labels = _two_means(Y, rng)
    resp = np.column_stack([labels == 0, labels == 1]).astype(float)
    resp = 0.9 * resp + 0.1 * rng.uniform(size=resp.shape)
    resp /= resp.sum(axis=1, keepdims=True)

    components, weight = _m_step(Y, resp, ridge)
    trace: List[float] = []
    converged = False
    for iteration in range(max_iter):
        if iteration > 0:
            components, weight = _m_step(Y, resp, ridge)
        joint = component_log_densities(Y, components, weight)
        norm = logsumexp(joint, axis=1, keepdims=True)
        trace.append(float(norm.sum()) + _penalty(components, ridge))
        # Every pass ends on an E-step, so resp always matches the returned parameters.
        resp = np.exp(joint - norm)
        if iteration > 0 and abs(trace[-1] - trace[-2]) < tol * abs(trace[-2]):
            converged = True
            break
    return MixtureFit(
        components=components,
        weight=weight,
        responsibilities=resp,
        loglik_trace=np.asarray(trace),
        converged=converged,
        n_iter=len(trace),
    )


def em_fit(
    Y: np.ndarray,
    n_restarts: int = 10,
    tol: float = 1e-8,
    max_iter: int = 500,
    rng: np.random.Generator | None = None,
) -> MixtureFit:
    """Fit a two-component normal mixture; best of ``n_restarts`` by final log-likelihood.

    The returned fit is labelled so that component 0 is the minority component.
    """

    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    n, s = Y.shape
    if n <= 2 * s + 2:
        raise ValueError(f"need more than {2 * s + 2} observations for a {s}-dimensional mixture, got {n}")
    if not np.all(np.isfinite(Y)):
        raise ValueError("outcome matrix contains missing or non-finite entries")
    rng = rng or np.random.default_rng()
    ridge = _ridge(Y)
    seeds = rng.integers(0, 2**63 - 1, size=n_restarts)

    best: MixtureFit | None = None
    collapsed = 0
    for index, seed in enumerate(seeds):
        try:
            fit = _single_run(Y, tol, max_iter, ridge, np.random.default_rng(seed))
        except _Collapsed as exc:
            collapsed += 1
            LOGGER.debug("EM restart %d collapsed: %s", index, exc)
            continue
        # Strict inequality keeps the lowest restart index on ties.
        if best is None or fit.loglik > best.loglik:
            best = fit
    if best is None:
        raise EmCollapseError(f"all {n_restarts} EM restarts collapsed")
    if collapsed * 2 > n_restarts:
        LOGGER.warning("%d of %d EM restarts collapsed", collapsed, n_restarts)
    return label_minority(best)


def label_minority(fit: MixtureFit) -> MixtureFit:
    """Order components so the first has mixing weight <= 0.5."""

    first, second = fit.components
    swap = fit.weight > 0.5 or (fit.weight == 0.5 and first.theta[0] > second.theta[0])
    if not swap:
        return fit
    return replace(
        fit,
        components=(second, first),
        weight=1.0 - fit.weight,
        responsibilities=fit.responsibilities[:, ::-1].copy(),
    )


def map_allocate(fit: MixtureFit) -> np.ndarray:
    """z_i = 1 when the adverse responsibility strictly exceeds one half."""

    return (fit.responsibilities[:, 0] > 0.5).astype(int)


def single_normal_loglik(Y: np.ndarray) -> float:
    """Maximized log-likelihood of one multivariate normal (MLE covariance)."""

    Y = np.asarray(Y, dtype=float)
    cov = np.atleast_2d(np.cov(Y, rowvar=False, bias=True))
    return float(np.sum(mvn_logpdf(Y, Y.mean(axis=0), SpdMatrix(cov))))


__all__ = [
    "ComponentParams",
    "MixtureFit",
    "EmCollapseError",
    "em_fit",
    "label_minority",
    "map_allocate",
    "responsibilities",
    "mixture_loglik",
    "component_log_densities",
    "single_normal_loglik",
]

"""Comparator methods: cutoff dichotomization, logistic MLE and penalized logistic paths."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from typing import List, Literal, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import linalg, stats
from scipy.special import expit, logit

from .mixture_em import em_fit, map_allocate
from .model import AsprData

LOGGER = logging.getLogger(__name__)

# |eta| beyond this on a converged or stalled fit is taken as separation.
SEPARATION_ETA = 30.0
MIN_WEIGHT = 1e-5

_CUTOFF = re.compile(r"^\s*([^<>=\s]+)\s*(<=|>=|<|>)\s*([-+0-9.eE]+)\s*$")


@dataclass(frozen=True)
class Cutoff:
    """Adverse when ``Y[:, column] op threshold`` holds."""

    column: int
    op: str
    threshold: float

    def violated(self, Y: np.ndarray) -> np.ndarray:
        values = Y[:, self.column]
        if self.op == "<":
            return values < self.threshold
        if self.op == "<=":
            return values <= self.threshold
        if self.op == ">":
            return values > self.threshold
        return values >= self.threshold


def parse_cutoffs(text: str, outcome_names: Sequence[str]) -> List[Cutoff]:
    """Parse ``"gest<259,bw<2500"`` against the outcome column names."""

    index = {name: k for k, name in enumerate(outcome_names)}
    cutoffs = []
    for part in filter(None, (piece.strip() for piece in text.split(","))):
        match = _CUTOFF.match(part)
        if match is None:
            raise ValueError(f"cannot parse cutoff {part!r}; expected e.g. 'bw<2500'")
        name, op, value = match.groups()
        if name not in index:
            raise ValueError(f"cutoff refers to unknown outcome {name!r}")
        cutoffs.append(Cutoff(index[name], op, float(value)))
    if not cutoffs:
        raise ValueError("at least one cutoff is required")
    return cutoffs


def dichotomize_cutoff(
    Y: np.ndarray, cutoffs: Sequence[Cutoff], rule: Literal["union", "intersection"] = "union"
) -> np.ndarray:
    """z_i = 1 when any (union) or every (intersection) cutoff is violated."""

    if not cutoffs:
        raise ValueError("at least one cutoff is required")
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    hits = np.column_stack([cut.violated(Y) for cut in cutoffs])
    if rule == "union":
        return hits.any(axis=1).astype(int)
    if rule == "intersection":
        return hits.all(axis=1).astype(int)
    raise ValueError(f"unknown cutoff rule {rule!r}")


@dataclass
class LogisticFit:
    intercept: float
    coefficients: np.ndarray
    std_errors: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    converged: bool
    n_iter: int
    separated: bool
    deviance: float

    @property
    def interval_lengths(self) -> np.ndarray:
        """Wald interval widths; NaN where the standard error is not finite."""

        lengths = self.upper - self.lower
        return np.where(np.isfinite(lengths), lengths, np.nan)

    def selected(self) -> np.ndarray:
        """Wald interval excludes zero."""

        return (self.lower > 0.0) | (self.upper < 0.0)

    def to_frame(self, names: Sequence[str]) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "estimate": self.coefficients,
                "std_error": self.std_errors,
                "lower": self.lower,
                "upper": self.upper,
                "selected": self.selected(),
            },
            index=pd.Index(list(names), name="predictor"),
        )


def _as_matrix(X: np.ndarray, n: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != n:
        raise ValueError(f"predictors have {X.shape[0]} rows, response has {n}")
    return X


def _design(X: np.ndarray, n: int) -> np.ndarray:
    X = _as_matrix(X, n)
    return np.column_stack([np.ones(n), X])


def binomial_deviance(z: np.ndarray, eta: np.ndarray) -> float:
    # -2 loglik = 2 sum log(1 + e^eta) - z eta
    return float(2.0 * np.sum(np.logaddexp(0.0, eta) - z * eta))


def _check_binary(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float).ravel()
    if not np.all((z == 0) | (z == 1)):
        raise ValueError("response must be coded 0/1")
    if z.min() == z.max():
        raise ValueError("response has a single class; logistic fit is undefined")
    return z


def logit_mle(z: np.ndarray, X: np.ndarray, level: float = 0.9, max_iter: int = 100, tol: float = 1e-8) -> LogisticFit:
    """Unpenalized logistic regression by Newton/IRLS with Wald intervals."""

    z = _check_binary(z)
    n = z.shape[0]
    design = _design(X, n)
    coef = np.zeros(design.shape[1])
    coef[0] = logit(z.mean())
    deviance = binomial_deviance(z, design @ coef)
    converged = False
    iteration = 0
    for iteration in range(1, max_iter + 1):
        eta = design @ coef
        prob = expit(eta)
        gradient = design.T @ (z - prob)
        if np.linalg.norm(gradient) < tol:
            converged = True
            break
        weights = prob * (1.0 - prob)
        hessian = (design * weights[:, None]).T @ design
        try:
            step = linalg.solve(hessian, gradient, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = np.linalg.lstsq(hessian, gradient, rcond=None)[0]
        # Step halving keeps the deviance nonincreasing.
        scale = 1.0
        while scale > 1e-10:
            trial = coef + scale * step
            trial_dev = binomial_deviance(z, design @ trial)
            if trial_dev <= deviance + 1e-12 * max(1.0, abs(deviance)):
                break
            scale *= 0.5
        coef, deviance = trial, trial_dev

    eta = design @ coef
    separated = bool(np.max(np.abs(eta)) > SEPARATION_ETA)
    if separated:
        LOGGER.warning("logistic MLE shows separation; Wald intervals are unreliable")
    prob = expit(eta)
    info = (design * (prob * (1.0 - prob))[:, None]).T @ design
    try:
        cov = linalg.inv(info)
        se = np.sqrt(np.maximum(np.diag(cov), 0.0))
    except linalg.LinAlgError:
        se = np.full(design.shape[1], np.inf)
    if separated:
        se = np.full(design.shape[1], np.inf)
    half = stats.norm.ppf(0.5 + 0.5 * level) * se
    return LogisticFit(
        intercept=float(coef[0]),
        coefficients=coef[1:],
        std_errors=se[1:],
        lower=coef[1:] - half[1:],
        upper=coef[1:] + half[1:],
        level=level,
        converged=converged,
        n_iter=iteration,
        separated=separated,
        deviance=binomial_deviance(z, eta),
    )


@dataclass
class PenalizedPath:
    """Coefficients on the original predictor scale along a descending lambda grid."""

    lambdas: np.ndarray
    alpha: float
    intercepts: np.ndarray
    coefficients: np.ndarray
    deviance: np.ndarray
    converged: np.ndarray
    selected_lambda: float | None = None

    def index_of(self, lam: float) -> int:
        return int(np.argmin(np.abs(self.lambdas - lam)))

    def at(self, lam: float | None = None) -> Tuple[float, np.ndarray]:
        lam = self.selected_lambda if lam is None else lam
        if lam is None:
            raise ValueError("no lambda selected on this path")
        k = self.index_of(lam)
        return float(self.intercepts[k]), self.coefficients[k]

    def to_frame(self, names: Sequence[str]) -> pd.DataFrame:
        _, beta = self.at()
        return pd.DataFrame(
            {"estimate": beta, "active": beta != 0.0, "lambda": self.selected_lambda},
            index=pd.Index(list(names), name="predictor"),
        )


@dataclass
class _Standardized:
    X: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    usable: np.ndarray


def _standardize(X: np.ndarray) -> _Standardized:
    X = np.asarray(X, dtype=float)
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    usable = scale > 0
    safe = np.where(usable, scale, 1.0)
    return _Standardized((X - center) / safe, center, safe, usable)


def lambda_max(z: np.ndarray, X: np.ndarray, alpha: float) -> float:
    """Smallest lambda at which every coefficient is zero."""

    std = _standardize(X)
    z = np.asarray(z, dtype=float)
    if std.X.shape[1] == 0:
        return 1.0
    score = np.abs(std.X.T @ (z - z.mean())) / z.shape[0]
    return float(np.max(score[std.usable], initial=0.0)) / max(alpha, 1e-3)


def lambda_grid(z: np.ndarray, X: np.ndarray, alpha: float, n_lambda: int = 100, min_ratio: float = 1e-4) -> np.ndarray:
    top = lambda_max(z, X, alpha)
    if top <= 0:
        top = 1.0
    return np.geomspace(top, top * min_ratio, n_lambda)


def _coordinate_descent(
    Xs: np.ndarray,
    usable: np.ndarray,
    z: np.ndarray,
    lam: float,
    alpha: float,
    b0: float,
    b: np.ndarray,
    tol: float,
    max_outer: int,
    max_sweeps: int,
) -> Tuple[float, np.ndarray, bool]:
    n = z.shape[0]
    l1 = lam * alpha
    l2 = lam * (1.0 - alpha)
    b = b.copy()
    for _ in range(max_outer):
        b0_start, b_start = b0, b.copy()
        prob = expit(b0 + Xs @ b)
        w = np.maximum(prob * (1.0 - prob), MIN_WEIGHT)
        res = (z - prob) / w
        v = (w @ Xs**2) / n

        def sweep(indices: np.ndarray) -> float:
            nonlocal b0
            biggest = 0.0
            for j in indices:
                old = b[j]
                grad = (w * Xs[:, j]) @ res / n + v[j] * old
                new = np.sign(grad) * max(abs(grad) - l1, 0.0) / (v[j] + l2)
                if new != old:
                    res[:] -= Xs[:, j] * (new - old)
                    b[j] = new
                    biggest = max(biggest, abs(new - old))
            shift = (w @ res) / w.sum()
            b0 += shift
            res[:] -= shift
            return max(biggest, abs(shift))

        candidates = np.flatnonzero(usable)
        for _ in range(max_sweeps):
            if sweep(candidates) < tol * 0.1:
                break
            # Cycle on the active set until it settles, then recheck every coordinate.
            active = candidates[b[candidates] != 0.0]
            for _ in range(max_sweeps):
                if sweep(active) < tol * 0.1:
                    break
        change = max(abs(b0 - b0_start), float(np.max(np.abs(b - b_start), initial=0.0)))
        if change < tol:
            return b0, b, True
    return b0, b, False


def logit_penalized(
    z: np.ndarray,
    X: np.ndarray,
    alpha: float = 1.0,
    lambdas: np.ndarray | None = None,
    tol: float = 1e-7,
    max_outer: int = 100,
    max_sweeps: int = 1000,
) -> PenalizedPath:
    """Elastic-net logistic path by cyclical coordinate descent.

    The penalty is lambda * (alpha |b|_1 + (1 - alpha)/2 |b|_2^2) on the
    standardized predictors; coefficients are returned on the original scale.
    """

    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"mixing parameter must lie in (0, 1], got {alpha}")
    z = _check_binary(z)
    n = z.shape[0]
    X = _as_matrix(X, n)
    std = _standardize(X)
    grid = lambda_grid(z, X, alpha) if lambdas is None else np.sort(np.asarray(lambdas, dtype=float))[::-1]
    if np.any(grid < 0):
        raise ValueError("lambda values must be non-negative")
    p = X.shape[1]
    intercepts = np.empty(grid.shape[0])
    coefs = np.zeros((grid.shape[0], p))
    deviance = np.empty(grid.shape[0])
    converged = np.zeros(grid.shape[0], dtype=bool)

    b0 = float(logit(z.mean()))
    b = np.zeros(p)
    for k, lam in enumerate(grid):
        b0, b, ok = _coordinate_descent(std.X, std.usable, z, lam, alpha, b0, b, tol, max_outer, max_sweeps)
        if not ok:
            LOGGER.warning("coordinate descent did not converge at lambda=%.3g", lam)
        beta = np.where(std.usable, b / std.scale, 0.0)
        coefs[k] = beta
        intercepts[k] = b0 - float(std.center @ beta)
        deviance[k] = binomial_deviance(z, intercepts[k] + X @ beta)
        converged[k] = ok
    return PenalizedPath(
        lambdas=grid, alpha=alpha, intercepts=intercepts, coefficients=coefs, deviance=deviance, converged=converged
    )


def kkt_violation(path: PenalizedPath, z: np.ndarray, X: np.ndarray, index: int) -> float:
    """Largest violation of the elastic-net optimality conditions at one grid point.

    Conditions are checked on the standardized scale used by the fit.
    """

    z = np.asarray(z, dtype=float)
    X = _as_matrix(X, z.shape[0])
    std = _standardize(X)
    lam, alpha = path.lambdas[index], path.alpha
    prob = expit(path.intercepts[index] + X @ path.coefficients[index])
    score = std.X.T @ (z - prob) / z.shape[0]
    b = path.coefficients[index] * std.scale
    worst = abs(float(np.mean(z - prob)))
    for j in np.flatnonzero(std.usable):
        if b[j] == 0.0:
            worst = max(worst, abs(score[j]) - alpha * lam)
        else:
            worst = max(worst, abs(score[j] - lam * (alpha * np.sign(b[j]) + (1.0 - alpha) * b[j])))
    return float(max(worst, 0.0))


def _stratified_folds(z: np.ndarray, folds: int, rng: np.random.Generator) -> np.ndarray:
    assignment = np.empty(z.shape[0], dtype=int)
    for label in (0, 1):
        members = rng.permutation(np.flatnonzero(z == label))
        assignment[members] = np.arange(members.shape[0]) % folds
    return assignment


def cv_select_lambda(
    z: np.ndarray,
    X: np.ndarray,
    alpha: float = 1.0,
    folds: int = 10,
    rng: np.random.Generator | None = None,
    lambdas: np.ndarray | None = None,
    max_attempts: int = 5,
) -> Tuple[float, np.ndarray]:
    """Choose lambda by stratified K-fold cross-validated binomial deviance.

    Returns the selected lambda and the mean held-out deviance per grid point.
    """

    z = _check_binary(z)
    n = z.shape[0]
    if n < folds:
        raise ValueError(f"need at least {folds} observations for {folds}-fold CV, got {n}")
    X = _as_matrix(X, n)
    rng = rng or np.random.default_rng()
    grid = lambda_grid(z, X, alpha) if lambdas is None else np.sort(np.asarray(lambdas, dtype=float))[::-1]

    for attempt in range(max_attempts):
        assignment = _stratified_folds(z, folds, rng)
        if all(np.unique(z[assignment != k]).size == 2 for k in range(folds)):
            break
        LOGGER.info("refolding: a training fold held a single class (attempt %d)", attempt + 1)
    else:
        raise ValueError(f"could not build {folds} folds with both classes after {max_attempts} attempts")

    held_out = np.zeros(grid.shape[0])
    for k in range(folds):
        train, test = assignment != k, assignment == k
        path = logit_penalized(z[train], X[train], alpha=alpha, lambdas=grid)
        for m in range(grid.shape[0]):
            eta = path.intercepts[m] + X[test] @ path.coefficients[m]
            held_out[m] += binomial_deviance(z[test], eta) / test.sum()
    held_out /= folds
    return float(grid[int(np.argmin(held_out))]), held_out


FIRST_STAGES = ("truth", "classification", "cutoff")
SECOND_STAGES = ("standard", "lasso", "elasticnet")


@dataclass
class TwoStageResult:
    first_stage: str
    second_stage: str
    z: np.ndarray
    estimates: np.ndarray
    selected: np.ndarray
    interval_lengths: np.ndarray | None
    fit: LogisticFit | PenalizedPath


def first_stage_labels(
    data: AsprData,
    first_stage: str,
    z_true: np.ndarray | None = None,
    cutoffs: Sequence[Cutoff] | None = None,
    rule: Literal["union", "intersection"] = "union",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    if first_stage == "truth":
        if z_true is None:
            raise ValueError("truth first stage needs the true labels")
        return np.asarray(z_true, dtype=int)
    if first_stage == "classification":
        return map_allocate(em_fit(data.Y, rng=rng))
    if first_stage == "cutoff":
        if not cutoffs:
            raise ValueError("cutoff first stage needs at least one cutoff")
        return dichotomize_cutoff(data.Y, cutoffs, rule)
    raise ValueError(f"unknown first stage {first_stage!r}; choose from {FIRST_STAGES}")


def two_stage(
    data: AsprData,
    first_stage: str,
    second_stage: str,
    z_true: np.ndarray | None = None,
    cutoffs: Sequence[Cutoff] | None = None,
    rule: Literal["union", "intersection"] = "union",
    level: float = 0.9,
    alpha_enet: float = 0.5,
    rng: np.random.Generator | None = None,
) -> TwoStageResult:
    """Dichotomize the outcomes, then regress the labels on the predictors."""

    if second_stage not in SECOND_STAGES:
        raise ValueError(f"unknown second stage {second_stage!r}; choose from {SECOND_STAGES}")
    rng = rng or np.random.default_rng()
    z = first_stage_labels(data, first_stage, z_true, cutoffs, rule, rng)
    if second_stage == "standard":
        fit = logit_mle(z, data.X, level=level)
        return TwoStageResult(
            first_stage, second_stage, z, fit.coefficients, fit.selected(), fit.interval_lengths, fit
        )
    alpha = 1.0 if second_stage == "lasso" else alpha_enet
    lam, _ = cv_select_lambda(z, data.X, alpha=alpha, rng=rng)
    path = logit_penalized(z, data.X, alpha=alpha)
    path.selected_lambda = float(path.lambdas[path.index_of(lam)])
    _, beta = path.at()
    return TwoStageResult(first_stage, second_stage, z, beta.copy(), beta != 0.0, None, path)


__all__ = [
    "Cutoff",
    "parse_cutoffs",
    "dichotomize_cutoff",
    "LogisticFit",
    "PenalizedPath",
    "binomial_deviance",
    "logit_mle",
    "logit_penalized",
    "lambda_max",
    "lambda_grid",
    "kkt_violation",
    "cv_select_lambda",
    "TwoStageResult",
    "first_stage_labels",
    "two_stage",
]

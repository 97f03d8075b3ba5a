"""Stored posterior draws and the summaries computed from them."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from .samplers import SpdMatrix, mvn_logpdf

LOGGER = logging.getLogger(__name__)

SUMMARY_QUANTILES = {"2.5%": 0.025, "50%": 0.5, "97.5%": 0.975, "5%": 0.05, "95%": 0.95}
SUMMARY_LAGS = (1, 10)

_THETA = re.compile(r"^theta\[(\d+)\]\[(\d+)\]$")
_SIGMA = re.compile(r"^Sigma\[(\d+)\]\[(\d+)\]\[(\d+)\]$")
_BETA = re.compile(r"^beta\[(.*)\]$")
_Z = re.compile(r"^z\[(\d+)\]$")


@dataclass
class PosteriorSamples:
    """Thinned post-burn-in draws from :func:`aspr.core.model.run_chain`.

    ``theta`` is G x 2 x s and ``sigma`` G x 2 x s x s with component 0 adverse.
    ``minority_fraction`` holds the adverse fraction at every iteration, burn-in
    included, so the label diagnostic can be computed after the fact.
    """

    theta: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    omega_bar: np.ndarray
    z: np.ndarray | None = None
    minority_fraction: np.ndarray = field(default_factory=lambda: np.zeros(0))
    burn_in: int = 0
    outcome_names: List[str] = field(default_factory=list)
    predictor_names: List[str] = field(default_factory=list)
    x_offsets: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tail_weight_max: float = 0.0

    def __post_init__(self) -> None:
        G = self.gamma.shape[0]
        if self.theta.shape[0] != G or self.beta.shape[0] != G or self.omega_bar.shape[0] != G:
            raise ValueError("stored draws disagree on the number of iterations")
        if not self.outcome_names:
            self.outcome_names = [f"y{k + 1}" for k in range(self.theta.shape[2])]
        if not self.predictor_names:
            self.predictor_names = [f"x{j + 1}" for j in range(self.beta.shape[1])]
        if self.x_offsets.shape[0] != self.beta.shape[1]:
            self.x_offsets = np.zeros(self.beta.shape[1])

    @property
    def n_draws(self) -> int:
        return self.gamma.shape[0]

    @property
    def s(self) -> int:
        return self.theta.shape[2]

    @property
    def p(self) -> int:
        return self.beta.shape[1]

    def label_diagnostic(self) -> float:
        """Fraction of post-burn-in iterations where the adverse class held the majority."""

        tail = self.minority_fraction[self.burn_in :]
        if tail.size == 0:
            return 0.0
        return float(np.mean(tail > 0.5))

    def parameter_frame(self) -> pd.DataFrame:
        """One column per model parameter: component means, covariances, gamma, beta."""

        columns: Dict[str, np.ndarray] = {}
        s = self.s
        for h in range(2):
            for k in range(s):
                columns[f"theta[{h + 1}][{k + 1}]"] = self.theta[:, h, k]
        for h in range(2):
            for k in range(s):
                for l in range(k, s):
                    columns[f"Sigma[{h + 1}][{k + 1}][{l + 1}]"] = self.sigma[:, h, k, l]
        columns["gamma"] = self.gamma
        for j, name in enumerate(self.predictor_names):
            columns[f"beta[{name}]"] = self.beta[:, j]
        return pd.DataFrame(columns)

    def to_frame(self, include_z: bool = False) -> pd.DataFrame:
        frame = self.parameter_frame()
        frame["omega_bar"] = self.omega_bar
        if include_z:
            if self.z is None:
                raise ValueError("allocations were not stored for this chain")
            z_frame = pd.DataFrame(self.z.astype(int), columns=[f"z[{i + 1}]" for i in range(self.z.shape[1])])
            frame = pd.concat([frame, z_frame], axis=1)
        return frame

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, outcome_names: Sequence[str] | None = None) -> "PosteriorSamples":
        """Rebuild draws from a frame written by :meth:`to_frame`.

        Outcome columns are indexed by position in the table, so their names
        come from ``outcome_names`` when given.
        """

        theta_cols = [(m, c) for c in frame.columns if (m := _THETA.match(c))]
        if not theta_cols:
            raise ValueError("sample table has no theta[h][k] columns")
        s = max(int(m.group(2)) for m, _ in theta_cols)
        G = len(frame)
        theta = np.empty((G, 2, s))
        for m, column in theta_cols:
            theta[:, int(m.group(1)) - 1, int(m.group(2)) - 1] = frame[column].to_numpy(dtype=float)
        sigma = np.empty((G, 2, s, s))
        found = 0
        for column in frame.columns:
            m = _SIGMA.match(column)
            if m is None:
                continue
            h, k, l = (int(g) - 1 for g in m.groups())
            values = frame[column].to_numpy(dtype=float)
            sigma[:, h, k, l] = values
            sigma[:, h, l, k] = values
            found += 1
        if found != s * (s + 1):
            raise ValueError(f"expected {s * (s + 1)} Sigma columns, found {found}")
        beta_cols = [(m.group(1), c) for c in frame.columns if (m := _BETA.match(c))]
        beta = np.column_stack([frame[c].to_numpy(dtype=float) for _, c in beta_cols]) if beta_cols else np.zeros((G, 0))
        z_cols = [c for c in frame.columns if _Z.match(c)]
        z = frame[z_cols].to_numpy(dtype=np.int8) if z_cols else None
        omega_bar = frame["omega_bar"].to_numpy(dtype=float) if "omega_bar" in frame else np.full(G, np.nan)
        if outcome_names is not None and len(outcome_names) != s:
            raise ValueError(f"got {len(outcome_names)} outcome names for {s} outcomes")
        return cls(
            theta=theta,
            sigma=sigma,
            gamma=frame["gamma"].to_numpy(dtype=float),
            beta=beta,
            omega_bar=omega_bar,
            z=z,
            outcome_names=list(outcome_names or []),
            predictor_names=[name for name, _ in beta_cols],
        )


def autocorrelation(draws: np.ndarray, lag: int) -> np.ndarray:
    """Lag-``lag`` sample autocorrelation of each column of a G x m draw matrix.

    Columns without spread, or chains no longer than ``lag``, give NaN.
    """

    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    if lag < 0:
        raise ValueError(f"lag must be non-negative, got {lag}")
    G = draws.shape[0]
    if lag >= G:
        return np.full(draws.shape[1], np.nan)
    dev = draws - draws.mean(axis=0)
    denom = np.sum(dev**2, axis=0)
    num = np.sum(dev[: G - lag] * dev[lag:], axis=0)
    varying = np.ptp(draws, axis=0) > 0
    return np.divide(num, denom, out=np.full(draws.shape[1], np.nan), where=varying)


def effective_sample_size(draws: np.ndarray) -> np.ndarray:
    """Batch-means effective sample size of each column, with floor(sqrt(G)) batches.

    A column without spread counts every draw as independent.
    """

    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    G = draws.shape[0]
    if G < 2:
        raise ValueError(f"need at least 2 draws, got {G}")
    n_batches = max(2, int(np.sqrt(G)))
    size = G // n_batches
    batch_means = draws[: n_batches * size].reshape(n_batches, size, -1).mean(axis=1)
    batch_var = size * batch_means.var(axis=0, ddof=1)
    variance = draws.var(axis=0, ddof=1)
    informative = (np.ptp(draws, axis=0) > 0) & (batch_var > 0)
    return np.divide(G * variance, batch_var, out=np.full(draws.shape[1], float(G)), where=informative)


def posterior_summary(samples: PosteriorSamples) -> pd.DataFrame:
    """Mean, SD, quantiles and mixing diagnostics for every parameter, one row each."""

    if samples.n_draws < 2:
        raise ValueError(f"need at least 2 stored draws, got {samples.n_draws}")
    if samples.n_draws < 100:
        LOGGER.warning("summarizing only %d stored draws", samples.n_draws)
    frame = samples.parameter_frame()
    values = frame.to_numpy(dtype=float)
    table = pd.DataFrame(
        {"Mean": values.mean(axis=0), "SD": values.std(axis=0, ddof=1)},
        index=frame.columns,
    )
    quantiles = np.quantile(values, list(SUMMARY_QUANTILES.values()), axis=0)
    for label, row in zip(SUMMARY_QUANTILES, quantiles):
        table[label] = row
    for lag in SUMMARY_LAGS:
        table[f"ACF{lag}"] = autocorrelation(values, lag)
    table["ESS"] = effective_sample_size(values)
    table.index.name = "parameter"
    return table


def chain_diagnostics(samples: PosteriorSamples) -> pd.DataFrame:
    """One-row table of run-level checks: stored draws, label switching, truncation tail mass."""

    return pd.DataFrame(
        {
            "draws": [samples.n_draws],
            "label_diagnostic": [samples.label_diagnostic()],
            "tail_weight_max": [samples.tail_weight_max],
        }
    )


def effect_probability(samples: PosteriorSamples, eps: float = 0.1) -> np.ndarray:
    """Posterior probability that |beta_j| exceeds ``eps``."""

    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if samples.n_draws == 0:
        return np.zeros(samples.p)
    return np.mean(np.abs(samples.beta) > eps, axis=0)


def allocation_probability(samples: PosteriorSamples) -> np.ndarray:
    """Posterior probability that each subject belongs to the healthy class."""

    if samples.z is None:
        raise ValueError("allocations were not stored for this chain")
    return 1.0 - samples.z.mean(axis=0)


def posterior_predictive_density(samples: PosteriorSamples, grid: np.ndarray) -> np.ndarray:
    """Average over draws of the two-component density at each grid row."""

    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if grid.shape[1] != samples.s:
        raise ValueError(f"grid has {grid.shape[1]} columns but the outcomes are {samples.s}-dimensional")
    if np.any(np.isnan(samples.omega_bar)):
        raise ValueError("sample table carries no omega_bar column")
    density = np.zeros(grid.shape[0])
    for g in range(samples.n_draws):
        weights = (samples.omega_bar[g], 1.0 - samples.omega_bar[g])
        for h in range(2):
            if weights[h] <= 0.0:
                continue
            log_pdf = mvn_logpdf(grid, samples.theta[g, h], SpdMatrix(samples.sigma[g, h]))
            density += weights[h] * np.exp(log_pdf)
    return density / samples.n_draws


def _interval(samples: PosteriorSamples, level: float) -> np.ndarray:
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    tail = 0.5 * (1.0 - level)
    return np.quantile(samples.beta, [tail, 1.0 - tail], axis=0)


def select_by_interval(samples: PosteriorSamples, level: float = 0.9) -> np.ndarray:
    """Predictors whose equal-tailed credible interval excludes zero."""

    lower, upper = _interval(samples, level)
    return (lower > 0.0) | (upper < 0.0)


def credible_interval_lengths(samples: PosteriorSamples, level: float = 0.9) -> np.ndarray:
    lower, upper = _interval(samples, level)
    return upper - lower


def odds_ratio_summary(samples: PosteriorSamples, level: float = 0.9) -> pd.DataFrame:
    """Coefficients and their credible intervals on the log-odds and odds-ratio scales.

    Odds ratios compare one unit of the uncentered predictor, so for 0/1 SNP
    coding they refer to carrying the minor allele.
    """

    lower, upper = _interval(samples, level)
    mean = samples.beta.mean(axis=0)
    return pd.DataFrame(
        {
            "beta": mean,
            "lower": lower,
            "upper": upper,
            "odds_ratio": np.exp(mean),
            "or_lower": np.exp(lower),
            "or_upper": np.exp(upper),
            "selected": (lower > 0.0) | (upper < 0.0),
        },
        index=pd.Index(samples.predictor_names, name="predictor"),
    )


def top_effects(samples: PosteriorSamples, k: int = 10, level: float = 0.9) -> pd.DataFrame:
    """The ``k`` predictors with the largest absolute posterior mean."""

    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    table = odds_ratio_summary(samples, level)
    order = np.argsort(-np.abs(table["beta"].to_numpy()), kind="stable")
    return table.iloc[order[:k]]


__all__ = [
    "PosteriorSamples",
    "autocorrelation",
    "effective_sample_size",
    "posterior_summary",
    "chain_diagnostics",
    "effect_probability",
    "allocation_probability",
    "posterior_predictive_density",
    "select_by_interval",
    "credible_interval_lengths",
    "odds_ratio_summary",
    "top_effects",
]

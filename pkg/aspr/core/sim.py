"""Simulation designs, correlated SNP predictors and synthetic ASPR datasets."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit, ndtri

from .mixture_em import ComponentParams
from .model import AsprData, ChainConfig
from .persist import read_matrix
from .samplers import SpdMatrix

LOGGER = logging.getLogger(__name__)

# Posterior means of the two birth-outcome components (gestational age in days, birth weight in grams).
ADVERSE_THETA = [237.52, 2001.55]
ADVERSE_SIGMA = [[829.19, 19322.84], [19322.84, 508531.02]]
HEALTHY_THETA = [273.25, 3182.41]
HEALTHY_SIGMA = [[96.78, 2174.75], [2174.75, 235640.32]]

DEFAULT_METHODS = [
    "aspr",
    "truth+standard",
    "classification+standard",
    "cutoff+standard",
    "truth+elasticnet",
    "classification+elasticnet",
    "cutoff+elasticnet",
]


@dataclass
class SimDesign:
    n: int = 813
    p: int = 100
    nonnull_count: int = 10
    nonnull_value: float = 0.8
    target_fraction: float = 0.10
    outcome_names: List[str] = field(default_factory=lambda: ["gest", "bw"])
    theta_adverse: List[float] = field(default_factory=lambda: list(ADVERSE_THETA))
    sigma_adverse: List[List[float]] = field(default_factory=lambda: [list(r) for r in ADVERSE_SIGMA])
    theta_healthy: List[float] = field(default_factory=lambda: list(HEALTHY_THETA))
    sigma_healthy: List[List[float]] = field(default_factory=lambda: [list(r) for r in HEALTHY_SIGMA])
    predictors_file: str | None = None
    maf_low: float = 0.05
    maf_high: float = 0.5
    block_corr: float = 0.3
    block_size: int = 10
    replicates: int = 100
    seed: int = 2024
    methods: List[str] = field(default_factory=lambda: list(DEFAULT_METHODS))
    n_iter: int = 11000
    burn_in: int = 1000
    thin: int = 10
    augment_passes: int = 1
    epsilon: float = 0.1
    level: float = 0.9
    alpha_enet: float = 0.5
    cutoffs: str = "gest<259,bw<2500"
    cutoff_rule: str = "union"
    workers: int = 1

    def __post_init__(self) -> None:
        if not 0 <= self.nonnull_count <= self.p:
            raise ValueError(f"nonnull_count must lie in [0, p={self.p}], got {self.nonnull_count}")
        if not 0.0 < self.target_fraction < 1.0:
            raise ValueError(f"target_fraction must lie in (0, 1), got {self.target_fraction}")
        if not 0.0 < self.maf_low <= self.maf_high <= 0.5:
            raise ValueError("minor allele frequencies must satisfy 0 < low <= high <= 0.5")
        if self.replicates < 1:
            raise ValueError(f"replicates must be at least 1, got {self.replicates}")
        for comp in self.components():
            if comp.dim != len(self.outcome_names):
                raise ValueError("component dimension does not match the outcome names")

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "SimDesign":
        known = {f.name: f for f in fields(cls)}
        unknown = set(payload) - set(known)
        if unknown:
            raise ValueError(f"unknown design settings: {sorted(unknown)}")
        kwargs: Dict[str, Any] = {}
        for key, value in payload.items():
            default = known[key].default if key != "predictors_file" else None
            if isinstance(default, bool) or value is None:
                kwargs[key] = value
            elif isinstance(default, int):
                kwargs[key] = int(value)
            elif isinstance(default, float):
                kwargs[key] = float(value)
            elif key == "methods" and isinstance(value, str):
                kwargs[key] = [m.strip() for m in value.split(",") if m.strip()]
            else:
                kwargs[key] = value
        return cls(**kwargs)

    def components(self) -> Tuple[ComponentParams, ComponentParams]:
        return (
            ComponentParams(np.asarray(self.theta_adverse, dtype=float), SpdMatrix(np.asarray(self.sigma_adverse))),
            ComponentParams(np.asarray(self.theta_healthy, dtype=float), SpdMatrix(np.asarray(self.sigma_healthy))),
        )

    def chain_config(self, seed: int = 0) -> ChainConfig:
        return ChainConfig.from_dict(
            {
                "n_iter": self.n_iter,
                "burn_in": self.burn_in,
                "thin": self.thin,
                "seed": seed,
                "augment_passes": self.augment_passes,
            }
        )

    def to_dict(self) -> Dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def load_design(path: Path) -> SimDesign:
    payload = json.loads(Path(path).read_text())
    if not isinstance(payload, dict):
        raise ValueError("design file must contain a JSON object")
    return SimDesign.from_dict(payload)


def gen_correlated_snps(
    n: int, p: int, maf: np.ndarray | float, block_corr: float, block_size: int, rng: np.random.Generator
) -> np.ndarray:
    """0/1 carrier indicators from thresholded block-exchangeable Gaussian latents.

    Column j is 1 with probability maf_j; latents share correlation ``block_corr``
    within consecutive blocks of ``block_size`` columns.
    """

    maf = np.broadcast_to(np.asarray(maf, dtype=float), (p,))
    if np.any(maf <= 0.0) or np.any(maf > 0.5):
        raise ValueError("minor allele frequencies must lie in (0, 0.5]")
    if not 0.0 <= block_corr < 1.0:
        raise ValueError(f"block correlation must lie in [0, 1), got {block_corr}")
    if block_size < 1:
        raise ValueError(f"block size must be at least 1, got {block_size}")
    n_blocks = -(-p // block_size)
    shared = rng.standard_normal((n, n_blocks))
    block_of = np.arange(p) // block_size
    latent = np.sqrt(block_corr) * shared[:, block_of] + np.sqrt(1.0 - block_corr) * rng.standard_normal((n, p))
    return (latent > ndtri(1.0 - maf)).astype(float)


def true_beta(design: SimDesign) -> np.ndarray:
    beta = np.zeros(design.p)
    beta[: design.nonnull_count] = design.nonnull_value
    return beta


def solve_intercept(X: np.ndarray, beta: np.ndarray, target: float) -> float:
    """Intercept whose sample-average adverse probability equals ``target``."""

    eta = np.asarray(X, dtype=float) @ beta
    return float(brentq(lambda g: float(np.mean(expit(g + eta))) - target, -50.0, 50.0, xtol=1e-12))


def design_predictors(design: SimDesign, rng: np.random.Generator) -> np.ndarray:
    """Fixed predictor matrix for a study: read from file or generated once."""

    if design.predictors_file:
        X, _ = read_matrix(Path(design.predictors_file))
        if X.shape != (design.n, design.p):
            raise ValueError(f"predictor file has shape {X.shape}, design expects {(design.n, design.p)}")
        return X
    maf = rng.uniform(design.maf_low, design.maf_high, size=design.p)
    return gen_correlated_snps(design.n, design.p, maf, design.block_corr, design.block_size, rng)


@dataclass
class SimulatedDataset:
    data: AsprData
    z_true: np.ndarray
    beta_true: np.ndarray
    gamma_true: float


def simulate_dataset(
    design: SimDesign, X: np.ndarray, beta_true: np.ndarray, rng: np.random.Generator
) -> SimulatedDataset:
    """Draw latent classes from the logistic model and outcomes from the class components."""

    X = np.asarray(X, dtype=float)
    if X.shape != (design.n, design.p) or beta_true.shape[0] != design.p:
        raise ValueError(f"predictors {X.shape} and coefficients {beta_true.shape} do not match the design")
    gamma = solve_intercept(X, beta_true, design.target_fraction)
    z = (rng.uniform(size=design.n) < expit(gamma + X @ beta_true)).astype(int)
    adverse, healthy = design.components()
    s = adverse.dim
    noise = rng.standard_normal((design.n, s))
    Y = np.where(
        z[:, None] == 1,
        adverse.theta + noise @ adverse.sigma.chol.T,
        healthy.theta + noise @ healthy.sigma.chol.T,
    )
    names = [f"snp{j + 1}" for j in range(design.p)]
    data = AsprData.from_arrays(Y, X, outcome_names=design.outcome_names, predictor_names=names)
    return SimulatedDataset(data=data, z_true=z, beta_true=beta_true.copy(), gamma_true=gamma)


__all__ = [
    "SimDesign",
    "load_design",
    "gen_correlated_snps",
    "true_beta",
    "solve_intercept",
    "design_predictors",
    "SimulatedDataset",
    "simulate_dataset",
]

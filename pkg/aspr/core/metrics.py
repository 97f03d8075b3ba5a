"""Estimation and selection metrics for comparing methods across replicates."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

ROC_GRID_POINTS = 200


def split_mean(values: np.ndarray, nonnull: np.ndarray) -> Tuple[float, float]:
    """Means of ``values`` over the nonnull and over the null positions."""

    values = np.asarray(values, dtype=float)
    nonnull = np.asarray(nonnull, dtype=bool)
    if values.shape != nonnull.shape:
        raise ValueError("values and nonnull mask must have the same length")
    first = float(values[nonnull].mean()) if nonnull.any() else float("nan")
    second = float(values[~nonnull].mean()) if (~nonnull).any() else float("nan")
    return first, second


def mse_split(estimates: np.ndarray, truth: np.ndarray, nonnull: np.ndarray) -> Tuple[float, float]:
    """Mean squared error over the nonnull and the null coefficients."""

    err = (np.asarray(estimates, dtype=float) - np.asarray(truth, dtype=float)) ** 2
    return split_mean(err, nonnull)


def selection_metrics(selected: np.ndarray, truth_nonnull: np.ndarray) -> Tuple[float, float]:
    """(TPR, FPR) of a selected set against the true nonnull set."""

    selected = np.asarray(selected, dtype=bool)
    truth = np.asarray(truth_nonnull, dtype=bool)
    if selected.shape != truth.shape:
        raise ValueError("selection and truth must have the same length")
    positives, negatives = truth.sum(), (~truth).sum()
    tpr = float((selected & truth).sum() / positives) if positives else float("nan")
    fpr = float((selected & ~truth).sum() / negatives) if negatives else float("nan")
    return tpr, fpr


def _trapezoid(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.sum(np.diff(x) * (y[1:] + y[:-1]) * 0.5))


@dataclass
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float

    @classmethod
    def from_rates(cls, thresholds: np.ndarray, fpr: np.ndarray, tpr: np.ndarray) -> "RocCurve":
        x = np.concatenate([[0.0], fpr, [1.0]])
        y = np.concatenate([[0.0], tpr, [1.0]])
        order = np.lexsort((y, x))
        auc = _trapezoid(x[order], y[order])
        return cls(thresholds=np.asarray(thresholds), fpr=np.asarray(fpr), tpr=np.asarray(tpr), auc=auc)

    def to_frame(self, method: str | None = None) -> pd.DataFrame:
        frame = pd.DataFrame({"threshold": self.thresholds, "fpr": self.fpr, "tpr": self.tpr})
        if method is not None:
            frame.insert(0, "method", method)
        return frame


def default_grid(effects: np.ndarray, points: int = ROC_GRID_POINTS) -> np.ndarray:
    top = float(np.max(np.abs(effects), initial=0.0))
    return np.linspace(0.0, top, points)


def selection_rates(effects: np.ndarray, truth_nonnull: np.ndarray, grid: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    effects = np.abs(np.asarray(effects, dtype=float))
    truth = np.asarray(truth_nonnull, dtype=bool)
    selected = effects[None, :] > np.asarray(grid, dtype=float)[:, None]
    tpr = (selected & truth).sum(axis=1) / max(int(truth.sum()), 1)
    fpr = (selected & ~truth).sum(axis=1) / max(int((~truth).sum()), 1)
    return fpr, tpr


def roc_from_effects(
    effects: np.ndarray, truth_nonnull: np.ndarray, grid: np.ndarray | None = None
) -> RocCurve:
    """ROC over thresholds eps, selecting predictor j when |effect_j| > eps."""

    grid = default_grid(effects) if grid is None else np.asarray(grid, dtype=float)
    fpr, tpr = selection_rates(effects, truth_nonnull, grid)
    return RocCurve.from_rates(grid, fpr, tpr)


def average_roc(
    effects: Sequence[np.ndarray], truths: Sequence[np.ndarray], points: int = ROC_GRID_POINTS
) -> RocCurve:
    """Pointwise mean of per-replicate rates on one shared threshold grid."""

    if not effects:
        raise ValueError("no replicates to average")
    grid = default_grid(np.concatenate([np.abs(e) for e in effects]), points)
    rates = [selection_rates(e, t, grid) for e, t in zip(effects, truths)]
    fpr = np.mean([r[0] for r in rates], axis=0)
    tpr = np.mean([r[1] for r in rates], axis=0)
    return RocCurve.from_rates(grid, fpr, tpr)


@dataclass
class MethodMetrics:
    method: str
    mse_nonnull: float
    mse_null: float
    length_nonnull: float
    length_null: float
    tpr: float
    fpr: float
    auc: float
    replicates: int
    failures: int
    # Rates of the rule |estimate| > epsilon.
    tpr_eps: float = float("nan")
    fpr_eps: float = float("nan")


@dataclass
class MetricsTable:
    rows: List[MethodMetrics] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "method": [r.method for r in self.rows],
                "MSE_nonnull": [r.mse_nonnull for r in self.rows],
                "MSE_null": [r.mse_null for r in self.rows],
                "length_nonnull": [r.length_nonnull for r in self.rows],
                "length_null": [r.length_null for r in self.rows],
                "TPR": [r.tpr for r in self.rows],
                "FPR": [r.fpr for r in self.rows],
                "TPR_eps": [r.tpr_eps for r in self.rows],
                "FPR_eps": [r.fpr_eps for r in self.rows],
                "AUC": [r.auc for r in self.rows],
                "replicates": [r.replicates for r in self.rows],
                "failures": [r.failures for r in self.rows],
            }
        )

    def row(self, method: str) -> MethodMetrics:
        for entry in self.rows:
            if entry.method == method:
                return entry
        raise KeyError(method)


__all__ = [
    "split_mean",
    "mse_split",
    "selection_metrics",
    "RocCurve",
    "default_grid",
    "selection_rates",
    "roc_from_effects",
    "average_roc",
    "MethodMetrics",
    "MetricsTable",
]

"""Replicated simulation study comparing ASPR with two-stage baselines."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np
import pandas as pd

from .baselines import FIRST_STAGES, SECOND_STAGES, parse_cutoffs, two_stage
from .metrics import (
    MethodMetrics,
    MetricsTable,
    RocCurve,
    average_roc,
    mse_split,
    roc_from_effects,
    selection_metrics,
    split_mean,
)
from .mixture_em import em_fit
from .model import default_priors, run_chain
from .samplers import RngStream
from .sim import SimDesign, SimulatedDataset, design_predictors, simulate_dataset, true_beta
from .summary import credible_interval_lengths, select_by_interval

LOGGER = logging.getLogger(__name__)

METHODS: List[str] = ["aspr", "aspr-plugin"] + [f"{a}+{b}" for a in FIRST_STAGES for b in SECOND_STAGES]
# Stable stream index per method, so adding or reordering methods leaves the others unchanged.
_METHOD_INDEX = {name: k + 1 for k, name in enumerate(METHODS)}


@dataclass
class MethodOutcome:
    estimates: np.ndarray
    selected: np.ndarray
    lengths: np.ndarray | None


@dataclass
class ReplicateResult:
    replicate: int
    outcomes: Dict[str, MethodOutcome] = field(default_factory=dict)
    errors: Dict[str, str] = field(default_factory=dict)


def check_methods(methods: Sequence[str]) -> List[str]:
    unknown = [m for m in methods if m not in _METHOD_INDEX]
    if unknown:
        raise ValueError(f"unknown methods {unknown}; choose from {METHODS}")
    if not methods:
        raise ValueError("at least one method is required")
    return list(methods)


def fit_method(
    method: str, design: SimDesign, sim: SimulatedDataset, stream: RngStream
) -> MethodOutcome:
    """Run one method on one simulated dataset."""

    rng = stream.generator()
    data = sim.data
    if method in ("aspr", "aspr-plugin"):
        priors = default_priors(data)
        if method == "aspr-plugin":
            priors.plugin = em_fit(data.Y, rng=rng).components
        config = design.chain_config(seed=int(rng.integers(2**31)))
        samples = run_chain(data, priors, config, rng=rng, store_z=False)
        return MethodOutcome(
            estimates=samples.beta.mean(axis=0),
            selected=select_by_interval(samples, design.level),
            lengths=credible_interval_lengths(samples, design.level),
        )
    first, second = method.split("+")
    cutoffs = parse_cutoffs(design.cutoffs, data.outcome_names) if first == "cutoff" else None
    result = two_stage(
        data,
        first,
        second,
        z_true=sim.z_true,
        cutoffs=cutoffs,
        rule=design.cutoff_rule,
        level=design.level,
        alpha_enet=design.alpha_enet,
        rng=rng,
    )
    return MethodOutcome(result.estimates, result.selected, result.interval_lengths)


def run_replicate(design: SimDesign, X: np.ndarray, methods: Sequence[str], replicate: int) -> ReplicateResult:
    stream = RngStream(design.seed).child(replicate + 1)
    result = ReplicateResult(replicate)
    try:
        sim = simulate_dataset(design, X, true_beta(design), stream.child(0).generator())
    except Exception as exc:  # noqa: BLE001 - every method fails with the dataset
        for method in methods:
            result.errors[method] = f"simulation failed: {exc}"
        return result
    for method in methods:
        try:
            result.outcomes[method] = fit_method(method, design, sim, stream.child(_METHOD_INDEX[method]))
        except Exception as exc:  # noqa: BLE001 - failures are counted, never fatal
            result.errors[method] = f"{type(exc).__name__}: {exc}"
    return result


@dataclass
class StudyResult:
    table: MetricsTable
    roc: Dict[str, RocCurve]
    replicates: List[ReplicateResult]

    def roc_frame(self) -> pd.DataFrame:
        frames = [curve.to_frame(method) for method, curve in self.roc.items()]
        return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()


def _mean(values: List[float]) -> float:
    finite = [v for v in values if not np.isnan(v)]
    return float(np.mean(finite)) if finite else float("nan")


def summarize(design: SimDesign, methods: Sequence[str], replicates: Sequence[ReplicateResult]) -> StudyResult:
    """Average per-replicate metrics in replicate order."""

    truth = true_beta(design)
    nonnull = truth != 0.0
    table = MetricsTable()
    curves: Dict[str, RocCurve] = {}
    for method in methods:
        outcomes = [r.outcomes[method] for r in replicates if method in r.outcomes]
        failures = sum(method in r.errors for r in replicates)
        mse, lengths, rates, eps_rates, aucs = [], [], [], [], []
        for outcome in outcomes:
            mse.append(mse_split(outcome.estimates, truth, nonnull))
            rates.append(selection_metrics(outcome.selected, nonnull))
            eps_rates.append(selection_metrics(np.abs(outcome.estimates) > design.epsilon, nonnull))
            aucs.append(roc_from_effects(np.abs(outcome.estimates), nonnull).auc)
            if outcome.lengths is not None:
                lengths.append(split_mean(outcome.lengths, nonnull))
        table.rows.append(
            MethodMetrics(
                method=method,
                mse_nonnull=_mean([m[0] for m in mse]),
                mse_null=_mean([m[1] for m in mse]),
                length_nonnull=_mean([l[0] for l in lengths]),
                length_null=_mean([l[1] for l in lengths]),
                tpr=_mean([r[0] for r in rates]),
                fpr=_mean([r[1] for r in rates]),
                auc=_mean(aucs),
                replicates=len(outcomes),
                failures=failures,
                tpr_eps=_mean([r[0] for r in eps_rates]),
                fpr_eps=_mean([r[1] for r in eps_rates]),
            )
        )
        if outcomes:
            curves[method] = average_roc([np.abs(o.estimates) for o in outcomes], [nonnull] * len(outcomes))
    return StudyResult(table=table, roc=curves, replicates=list(replicates))


def run_study(design: SimDesign, methods: Sequence[str] | None = None, workers: int | None = None) -> StudyResult:
    """Simulate ``design.replicates`` datasets on one fixed predictor matrix and score each method."""

    methods = check_methods(methods or design.methods)
    workers = design.workers if workers is None else workers
    X = design_predictors(design, RngStream(design.seed).child(0).generator())
    indices = range(design.replicates)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(
                pool.map(run_replicate, [design] * len(indices), [X] * len(indices), [methods] * len(indices), indices)
            )
    else:
        results = [run_replicate(design, X, methods, r) for r in indices]
    for result in results:
        for method, message in result.errors.items():
            LOGGER.warning("replicate %d, %s failed: %s", result.replicate, method, message)
        LOGGER.info("replicate %d finished (%d methods ok)", result.replicate, len(result.outcomes))
    return summarize(design, methods, results)


__all__ = [
    "METHODS",
    "MethodOutcome",
    "ReplicateResult",
    "StudyResult",
    "check_methods",
    "fit_method",
    "run_replicate",
    "summarize",
    "run_study",
]

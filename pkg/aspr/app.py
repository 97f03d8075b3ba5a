"""Command line entry point for ASPR fits, baselines and simulation studies."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import pandas as pd

from .core.baselines import parse_cutoffs, two_stage
from .core.mixture_em import em_fit, single_normal_loglik
from .core.model import AsprData, ChainConfig, default_priors, run_chain, with_interactions
from .core.persist import load_config, load_json, read_matrix, read_pairs, read_table, save_json, write_frame
from .core.samplers import RngStream
from .core.sim import SimDesign, design_predictors, simulate_dataset, true_beta
from .core.study import run_study
from .core.summary import (
    PosteriorSamples,
    allocation_probability,
    chain_diagnostics,
    effect_probability,
    odds_ratio_summary,
    posterior_predictive_density,
    posterior_summary,
)

LOGGER = logging.getLogger(__name__)

SECOND_STAGE_ALIASES = {"standard": "standard", "lasso": "lasso", "enet": "elasticnet", "elasticnet": "elasticnet"}

# Resolved chain settings and column names, written next to samples.csv.
RUN_RECORD = "run.json"


def _load_data(outcomes: Path, predictors: Optional[Path], interactions: Optional[Path] = None) -> AsprData:
    Y, y_names = read_matrix(outcomes)
    X, x_names = (None, None) if predictors is None else read_matrix(predictors)
    if interactions is not None:
        if X is None:
            raise ValueError("--interactions needs --predictors")
        X, x_names = with_interactions(X, x_names, read_pairs(interactions))
    return AsprData.from_arrays(Y, X, outcome_names=y_names, predictor_names=x_names)


def _load_design(path: Optional[Path]) -> SimDesign:
    payload = dict(load_json("design.json", {}))
    if path is not None:
        payload.update(load_config(path))
    return SimDesign.from_dict(payload)


def _components_frame(fit, names: List[str]) -> pd.DataFrame:
    rows = []
    for label, comp, weight in zip(("adverse", "healthy"), fit.components, (fit.weight, 1.0 - fit.weight)):
        row = {"component": label, "weight": weight}
        row.update({f"mean[{name}]": value for name, value in zip(names, comp.theta)})
        for k in range(comp.dim):
            for l in range(k, comp.dim):
                row[f"Sigma[{names[k]}][{names[l]}]"] = comp.sigma.values[k, l]
        rows.append(row)
    return pd.DataFrame(rows)


def _chain_settings(args: argparse.Namespace) -> ChainConfig:
    settings = {} if args.chain is None else dict(load_config(args.chain))
    flags = {
        "n_iter": args.iters,
        "burn_in": args.burnin,
        "thin": args.thin,
        "seed": args.seed,
        "augment_passes": args.augment_passes,
        "z_link": args.z_link,
    }
    # Flags given on the command line win over the chain file.
    settings.update({key: value for key, value in flags.items() if value is not None})
    return ChainConfig.from_dict(settings)


def cmd_fit(args: argparse.Namespace) -> int:
    data = _load_data(args.outcomes, args.predictors, args.interactions)
    overrides = dict(load_json("priors.json", {}))
    if args.priors is not None:
        overrides.update(load_config(args.priors))
    priors = default_priors(data).with_overrides(overrides)
    config = _chain_settings(args)
    rng = RngStream(config.seed).generator()
    if args.plugin or args.historical is not None:
        source = data.Y if args.historical is None else read_matrix(args.historical)[0]
        priors.plugin = em_fit(source, rng=rng).components
        LOGGER.info("plug-in components fitted on %d subjects", source.shape[0])
    samples = run_chain(data, priors, config, rng=rng)

    out = Path(args.out)
    write_frame(samples.to_frame(include_z=args.with_z), out / "samples.csv")
    write_frame(posterior_summary(samples), out / "summary.csv", index=True)
    write_frame(chain_diagnostics(samples), out / "diagnostics.csv")
    write_frame(
        pd.DataFrame({"subject": np.arange(1, data.n + 1), "healthy_probability": allocation_probability(samples)}),
        out / "allocation.csv",
    )
    write_frame(
        pd.DataFrame({"predictor": data.predictor_names, "effect_probability": effect_probability(samples, args.eps)}),
        out / "effectprob.csv",
    )
    write_frame(odds_ratio_summary(samples, args.level), out / "odds_ratios.csv", index=True)
    save_json(
        out / RUN_RECORD,
        {"chain": config.to_dict(), "outcome_names": data.outcome_names, "predictor_names": data.predictor_names},
    )
    LOGGER.info("wrote %d draws to %s (label diagnostic %.3f)", samples.n_draws, out, samples.label_diagnostic())
    return 0


def cmd_em(args: argparse.Namespace) -> int:
    Y, names = read_matrix(args.outcomes)
    fit = em_fit(Y, n_restarts=args.restarts, rng=RngStream(args.seed).generator())
    LOGGER.info(
        "mixture log-likelihood %.3f vs single normal %.3f (%d iterations)",
        fit.loglik,
        single_normal_loglik(Y),
        fit.n_iter,
    )
    write_frame(_components_frame(fit, names), Path(args.out))
    return 0


def cmd_two_stage(args: argparse.Namespace) -> int:
    data = _load_data(args.outcomes, args.predictors)
    cutoffs = parse_cutoffs(args.cutoffs, data.outcome_names) if args.mode == "cutoff" else None
    result = two_stage(
        data,
        args.mode,
        SECOND_STAGE_ALIASES[args.second],
        cutoffs=cutoffs,
        rule=args.rule,
        level=args.level,
        alpha_enet=args.alpha,
        rng=RngStream(args.seed).generator(),
    )
    frame = result.fit.to_frame(data.predictor_names)
    write_frame(frame, Path(args.out), index=True)
    LOGGER.info("%d of %d predictors selected", int(result.selected.sum()), data.p)
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    design = _load_design(args.design)
    if args.seed is not None:
        design.seed = args.seed
    base = RngStream(design.seed)
    X = design_predictors(design, base.child(0).generator())
    beta = true_beta(design)
    sim = simulate_dataset(design, X, beta, base.child(1).child(0).generator())
    out = Path(args.out)
    write_frame(pd.DataFrame(sim.data.Y, columns=sim.data.outcome_names), out / "outcomes.csv")
    write_frame(pd.DataFrame(X, columns=sim.data.predictor_names), out / "predictors.csv")
    write_frame(pd.DataFrame({"z": sim.z_true}), out / "classes.csv")
    write_frame(pd.DataFrame({"predictor": sim.data.predictor_names, "beta": beta}), out / "beta.csv")
    LOGGER.info("simulated %d subjects, adverse fraction %.3f, intercept %.3f", design.n, sim.z_true.mean(), sim.gamma_true)
    return 0


def cmd_study(args: argparse.Namespace) -> int:
    design = _load_design(args.design)
    if args.replicates is not None:
        design.replicates = args.replicates
    if args.seed is not None:
        design.seed = args.seed
    methods = [m.strip() for m in args.methods.split(",") if m.strip()] if args.methods else None
    table_path, _, roc_path = args.out.partition(",")
    result = run_study(design, methods, workers=args.workers)
    write_frame(result.table.to_frame(), Path(table_path))
    save_json(Path(table_path).with_suffix(".design.json"), design.to_dict())
    if roc_path:
        write_frame(result.roc_frame(), Path(roc_path))
    return 0


def parse_grid(spec: str, dims: int) -> np.ndarray:
    """``"lo:hi:m,lo:hi:m"`` -> the rows of the product grid."""

    axes = []
    for part in spec.split(","):
        try:
            lo, hi, m = part.split(":")
            axes.append(np.linspace(float(lo), float(hi), int(m)))
        except ValueError as exc:
            raise ValueError(f"cannot parse grid axis {part!r}; expected lo:hi:count") from exc
    if len(axes) != dims:
        raise ValueError(f"grid has {len(axes)} axes but the outcomes are {dims}-dimensional")
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.column_stack([m.ravel() for m in mesh])


def cmd_ppd(args: argparse.Namespace) -> int:
    record = args.run if args.run is not None else Path(args.samples).parent / RUN_RECORD
    names = load_config(record).get("outcome_names") if Path(record).exists() else None
    samples = PosteriorSamples.from_frame(read_table(args.samples), outcome_names=names)
    grid = parse_grid(args.grid, samples.s)
    frame = pd.DataFrame(grid, columns=samples.outcome_names)
    frame["density"] = posterior_predictive_density(samples, grid)
    write_frame(frame, Path(args.out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aspr", description=__doc__)
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="Gibbs sampler for the full model")
    fit.add_argument("--outcomes", type=Path, required=True)
    fit.add_argument("--predictors", type=Path)
    fit.add_argument("--interactions", type=Path)
    fit.add_argument("--priors", type=Path)
    fit.add_argument("--plugin", action="store_true", help="fix components at EM estimates")
    fit.add_argument("--historical", type=Path, help="outcomes used for the plug-in EM fit")
    fit.add_argument("--chain", type=Path, help="JSON of chain settings; flags below override it")
    fit.add_argument("--iters", type=int)
    fit.add_argument("--burnin", type=int)
    fit.add_argument("--thin", type=int)
    fit.add_argument("--augment-passes", type=int)
    fit.add_argument("--z-link", choices=["logistic", "t"])
    fit.add_argument("--seed", type=int)
    fit.add_argument("--eps", type=float, default=0.1)
    fit.add_argument("--level", type=float, default=0.9)
    fit.add_argument("--with-z", action="store_true", help="include allocations in samples.csv")
    fit.add_argument("--out", type=Path, required=True)
    fit.set_defaults(handler=cmd_fit)

    em = sub.add_parser("em", help="two-component normal mixture by EM")
    em.add_argument("--outcomes", type=Path, required=True)
    em.add_argument("--restarts", type=int, default=10)
    em.add_argument("--seed", type=int, default=0)
    em.add_argument("--out", type=Path, required=True)
    em.set_defaults(handler=cmd_em)

    stage = sub.add_parser("two-stage", help="dichotomize, then logistic regression")
    stage.add_argument("--outcomes", type=Path, required=True)
    stage.add_argument("--predictors", type=Path, required=True)
    stage.add_argument("--mode", choices=["cutoff", "classification"], required=True)
    stage.add_argument("--second", choices=sorted(SECOND_STAGE_ALIASES), default="standard")
    stage.add_argument("--cutoffs", default="")
    stage.add_argument("--rule", choices=["union", "intersection"], default="union")
    stage.add_argument("--alpha", type=float, default=0.5, help="elastic-net mixing")
    stage.add_argument("--level", type=float, default=0.9)
    stage.add_argument("--seed", type=int, default=0)
    stage.add_argument("--out", type=Path, required=True)
    stage.set_defaults(handler=cmd_two_stage)

    simulate = sub.add_parser("simulate", help="write one simulated dataset")
    simulate.add_argument("--design", type=Path)
    simulate.add_argument("--seed", type=int)
    simulate.add_argument("--out", type=Path, required=True)
    simulate.set_defaults(handler=cmd_simulate)

    study = sub.add_parser("study", help="replicated simulation study")
    study.add_argument("--design", type=Path)
    study.add_argument("--methods", help="comma-separated method names")
    study.add_argument("--replicates", type=int)
    study.add_argument("--seed", type=int)
    study.add_argument("--workers", type=int)
    study.add_argument("--out", required=True, help="table.csv[,roc.csv]")
    study.set_defaults(handler=cmd_study)

    ppd = sub.add_parser("ppd", help="posterior predictive density on a grid")
    ppd.add_argument("--samples", type=Path, required=True)
    ppd.add_argument("--grid", required=True, help="lo:hi:m per outcome, comma separated")
    ppd.add_argument("--run", type=Path, help=f"run record with outcome names (default: {RUN_RECORD} beside the samples)")
    ppd.add_argument("--out", type=Path, required=True)
    ppd.set_defaults(handler=cmd_ppd)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv`` and run the selected command; returns the exit status."""

    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except (ValueError, RuntimeError) as exc:
        LOGGER.debug("command failed", exc_info=True)
        print(f"aspr: error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


__all__ = ["run", "main", "build_parser", "parse_grid"]

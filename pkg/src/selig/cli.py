"""Command-line front end.

Three subcommands: ``estimate`` runs the estimators on a data file,
``simulate`` runs a Monte Carlo study cell, ``oracle`` queries ground
truths (exact enumeration of a population file, or the potential-outcome
Monte Carlo of the built-in process).  Each writes delimited output plus a
JSON manifest that fully reproduces the run; the report commands also
render figures next to the tables.

Exit codes: 0 success, 2 input/validation problem, 3 estimation failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .errors import EstimationError, ValidationError
from .estimands import parse_estimand
from .inference import BootstrapSpec, bootstrap, default_threads
from .nuisance import FEATURE_MODES, LearnerConfig
from .oracle import ExactPopulation, enumerate_truth, mc_truth
from .panel import CovariateSchema, load_csv
from .report import (
    write_estimates_csv,
    write_manifest,
    write_simulation_csv,
    write_truths_csv,
)
from .simlab import SimulationConfig, run_study
from . import dgp
from .estimators import estimate_request


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=None,
                        help="worker processes (default: SELIG_THREADS or 1)")
    parser.add_argument("--no-figures", action="store_true",
                        help="skip figure rendering")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="selig",
        description="Longitudinal treatment-effect estimation under "
                    "selective eligibility",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    est = sub.add_parser("estimate", help="estimate from a data file")
    est.add_argument("--data", required=True, help="long-format CSV")
    est.add_argument("--schema", required=True, help="covariate schema JSON")
    est.add_argument("--estimand", action="append", required=True,
                     help="tau@t:hist, theta:POLICY, mean@t:hist, elig@t:hist"
                          " (repeatable; tau@t:* expands)")
    est.add_argument("--method", default="dr",
                     help="comma list from reg,ipw,dr")
    est.add_argument("--bootstrap", type=int, default=0,
                     help="bootstrap replicates (0 = point estimates only)")
    est.add_argument("--level", type=float, default=0.95)
    est.add_argument("--interval", choices=("percentile", "normal"),
                     default="percentile")
    est.add_argument("--features", choices=FEATURE_MODES, default="additive")
    est.add_argument("--propensity-features", choices=FEATURE_MODES,
                     default=None)
    est.add_argument("--recursion", choices=("product", "direct"),
                     default="product")
    est.add_argument("--outcome-kind", choices=("auto", "continuous", "binary"),
                     default="auto")
    est.add_argument("--cross-fit", type=int, default=0,
                     help="cross-fitting folds (0 = off, else >= 2)")
    _add_common(est)

    sim = sub.add_parser("simulate", help="run one Monte Carlo study cell")
    sim.add_argument("--n", type=int, required=True)
    sim.add_argument("--reps", type=int, default=500)
    sim.add_argument("--delta", type=float, default=0.0,
                     help="outcome feedback strength (0 or 0.5)")
    sim.add_argument("--outcome", choices=("continuous", "binary"),
                     default="continuous")
    sim.add_argument("--covariates", choices=("correct", "misspecified"),
                     default="correct")
    sim.add_argument("--learners", choices=("parametric", "saturated"),
                     default="parametric")
    sim.add_argument("--estimators", default="reg,ipw,dr")
    sim.add_argument("--noise-sd", type=float, default=1.0)
    sim.add_argument("--recompute-truths", action="store_true",
                     help="rerun the Monte Carlo oracle instead of the cache")
    _add_common(sim)

    orc = sub.add_parser("oracle", help="query ground truths")
    src = orc.add_mutually_exclusive_group(required=True)
    src.add_argument("--population", help="population definition JSON")
    src.add_argument("--dgp", choices=("continuous", "binary"),
                     help="built-in simulation process")
    orc.add_argument("--delta", type=float, default=0.0)
    orc.add_argument("--noise-sd", type=float, default=1.0)
    orc.add_argument("--estimand", action="append", required=True)
    orc.add_argument("--draws", type=int, default=10_000_000)
    _add_common(orc)
    return parser


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    return default_threads()


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config_echo(args) -> dict:
    skip = {"command"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def cmd_estimate(args) -> int:
    schema = CovariateSchema.from_json(args.schema)
    data = load_csv(args.data, schema)
    estimands = []
    for spec in args.estimand:
        estimands.extend(parse_estimand(spec))
    methods = [m.strip() for m in args.method.split(",") if m.strip()]
    for m in methods:
        if m not in ("reg", "ipw", "dr"):
            raise ValidationError(f"unknown method {m!r}")
    config = LearnerConfig(
        feature_mode=args.features,
        propensity_feature_mode=args.propensity_features,
        recursion=args.recursion,
        outcome_kind=args.outcome_kind,
        cross_fit_folds=args.cross_fit,
        cross_fit_seed=args.seed,
    )
    if args.bootstrap > 0:
        spec = BootstrapSpec(replicates=args.bootstrap, level=args.level,
                             seed=args.seed, interval=args.interval)
        reports = bootstrap(data, estimands, methods, spec, config,
                            threads=_threads(args))
    else:
        reports = estimate_request(data, estimands, methods, config)

    out = _outdir(args)
    write_estimates_csv(out / "estimates.csv", reports)
    write_manifest(out / "manifest.json", "estimate", _config_echo(args))
    if not args.no_figures:
        from .figures import render_estimates

        render_estimates(reports, out / "estimates.png")
    for r in reports:
        small = r.small_risk_sets()
        if small:
            print(f"warning: {r.estimand} [{r.method}] has small risk sets: "
                  f"{small}", file=sys.stderr)
    return 0


def cmd_simulate(args) -> int:
    config = SimulationConfig(
        n=args.n, reps=args.reps, delta=args.delta, outcome=args.outcome,
        covariates=args.covariates, learners=args.learners, seed=args.seed,
        noise_sd=args.noise_sd,
    )
    methods = tuple(m.strip() for m in args.estimators.split(",") if m.strip())
    for m in methods:
        if m not in ("reg", "ipw", "dr"):
            raise ValidationError(f"unknown estimator {m!r}")
    from .simlab import study_truths

    truths = study_truths(config, recompute=args.recompute_truths)
    report = run_study(config, methods=methods, threads=_threads(args),
                       truths=truths)
    out = _outdir(args)
    write_simulation_csv(out / "simulation.csv", report)
    write_manifest(out / "manifest.json", "simulate", _config_echo(args))
    if not args.no_figures:
        from .figures import render_study_bias, render_study_rmse

        render_study_bias(report, out / "bias.png")
        render_study_rmse(report, out / "rmse.png")
    return 0


def cmd_oracle(args) -> int:
    estimands = []
    for spec in args.estimand:
        estimands.extend(parse_estimand(spec))
    truths = []
    if args.population:
        pop = ExactPopulation.from_json(args.population)
        for e in estimands:
            truths.append(enumerate_truth(pop, e))
    else:
        config = dgp.DgpConfig(delta=args.delta, outcome=args.dgp,
                               noise_sd=args.noise_sd)
        for e in estimands:
            truths.append(mc_truth(config, e, draws=args.draws,
                                   seed=args.seed))
    out = _outdir(args)
    write_truths_csv(out / "truths.csv", truths)
    write_manifest(out / "manifest.json", "oracle", _config_echo(args))
    for t in truths:
        se = "" if t.se is None else f" (se {t.se:.3g})"
        print(f"{t.estimand} = {t.value:.10g}{se} [{t.method}]")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "estimate":
            return cmd_estimate(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        return cmd_oracle(args)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EstimationError as exc:
        print(f"estimation error: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

import argparse
import json
import logging
import sys
from dataclasses import replace
from typing import List, Optional

import numpy as np
import pandas as pd

from unlabeled_risk.config import (
    configure_logging,
    fit_config_instance,
    grad_descent_instance,
    grid_search_instance,
    resolve_threads,
    supervised_instance,
)
from unlabeled_risk.core.asymptotics.delta import (
    accuracy_surface,
    delta_method_risk_variance,
    imbalance_grid,
    separation_grid,
    variance_ratio_grid,
)
from unlabeled_risk.core.classifier import ClassifierParams, margins_batch
from unlabeled_risk.core.data.dataset import Dataset
from unlabeled_risk.core.data.loaders import (
    load_dense_csv,
    load_sparse,
    load_theta,
    save_dense_csv,
    save_sparse,
    save_theta,
)
from unlabeled_risk.core.data.synthetic import (
    FAMILIES,
    SynthConfig,
    calibrate_shift,
    generate_synthetic,
    midpoint_accuracy,
)
from unlabeled_risk.core.diagnostics.normality import histogram_export, normality_check
from unlabeled_risk.core.errors import ConfigError, DataError, UnlabeledRiskError
from unlabeled_risk.core.marginals import LabelMarginals
from unlabeled_risk.core.mixture.em import (
    fit_fixed_weight_mixture,
    fit_multiclass_mixtures,
    fit_single_gaussian,
)
from unlabeled_risk.core.risk.estimator import (
    empirical_risk,
    empirical_risk_multiclass,
    plugin_risk,
    plugin_risk_multiclass,
)
from unlabeled_risk.core.risk.losses import LossKind, LossSpec
from unlabeled_risk.core.risk.study import accuracy_study, summarize_study
from unlabeled_risk.core.run import Run, to_jsonable
from unlabeled_risk.core.train.supervised import error_rate, train_supervised_baseline
from unlabeled_risk.core.train.unsupervised import (
    EvaluationHook,
    RefitMode,
    SplitEvaluationHook,
    WindowMode,
    train_gradient_descent,
    train_grid_search,
)

logger = logging.getLogger("unlabeled_risk.main")

DEFAULT_IMBALANCE = [0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95]
DEFAULT_SEPARATION = [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0]
DEFAULT_VARIANCE_RATIO = [0.25, 0.5, 1.0, 2.0, 4.0]
DEFAULT_HISTOGRAM_BINS = 30


class UsageParser(argparse.ArgumentParser):
    """
    Usage errors exit with the configuration exit code 1.
    """

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)
    try:
        args.handler(args, parser)
    except UnlabeledRiskError as exc:
        _report_error(exc, exc.exit_code)
        return exc.exit_code
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = UsageParser(
        prog="unlabeled-risk",
        description="Estimate and minimize margin-based risk of linear classifiers without labels.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    estimate = commands.add_parser("estimate-risk", help="Plug-in risk of a classifier.")
    _data_arguments(estimate)
    _prior_arguments(estimate)
    _fit_arguments(estimate)
    estimate.add_argument("--theta", required=True, help="Classifier weights CSV (one row per classifier).")
    estimate.add_argument("--loss", default="log", choices=[k.value for k in LossKind])
    estimate.set_defaults(handler=cmd_estimate_risk)

    train = commands.add_parser("train", help="Unsupervised training.")
    _data_arguments(train)
    _prior_arguments(train)
    _fit_arguments(train)
    _train_arguments(train)
    train.add_argument("--split", type=float, help="Fraction of labeled data used for training.")
    train.add_argument("--baseline", action="store_true", help="Also train the supervised baseline.")
    train.set_defaults(handler=cmd_train)

    sweep = commands.add_parser("misspec-sweep", help="Train or evaluate under assumed p(Y=1) values.")
    _data_arguments(sweep)
    _fit_arguments(sweep)
    _train_arguments(sweep)
    sweep.add_argument("--grid", required=True, help="Comma-separated assumed p(Y=1) values.")
    sweep.set_defaults(handler=cmd_misspec_sweep)

    asymvar = commands.add_parser("asymvar", help="Asymptotic accuracy of the risk estimate.")
    asymvar.add_argument("--axis", default="imbalance", choices=["imbalance", "separation", "variance-ratio"])
    asymvar.add_argument("--values", help="Comma-separated grid values.")
    asymvar.add_argument("--loss", default="log", choices=["exp", "log", "hinge"])
    _common_arguments(asymvar)
    asymvar.set_defaults(handler=cmd_asymvar)

    normality = commands.add_parser("normality", help="KS check of the Gaussian margin model.")
    _data_arguments(normality)
    _prior_arguments(normality)
    _fit_arguments(normality)
    normality.add_argument("--theta", help="Classifier weights CSV; a random theta is drawn when absent.")
    normality.add_argument("--by-class", action="store_true", help="Single Gaussian per labeled class.")
    normality.add_argument("--standardize", action="store_true")
    normality.add_argument("--bins", type=int, default=DEFAULT_HISTOGRAM_BINS)
    normality.set_defaults(handler=cmd_normality)

    synth = commands.add_parser("synth", help="Generate planted synthetic data.")
    synth.add_argument("--d", type=int, required=True)
    synth.add_argument("--n", type=int, required=True)
    synth.add_argument("--py1", type=float, required=True)
    synth.add_argument("--accuracy", type=float, required=True)
    synth.add_argument("--family", default=FAMILIES[0], choices=FAMILIES)
    synth.add_argument("--centered", action="store_true")
    synth.add_argument("--format", default="csv", choices=["csv", "sparse"])
    _common_arguments(synth)
    synth.set_defaults(handler=cmd_synth)

    study = commands.add_parser("accuracy-study", help="Relative error of the risk estimate on synthetic data.")
    study.add_argument("--sizes", default="100,300,1000,3000,10000")
    study.add_argument("--accuracies", default="0.9")
    study.add_argument("--priors", default="0.8")
    study.add_argument("--losses", default="log,hinge")
    study.add_argument("--d", type=int, default=100)
    study.add_argument("--seeds", type=int, default=20, help="Number of seeds per cell.")
    study.add_argument("--family", default=FAMILIES[0], choices=FAMILIES)
    _common_arguments(study)
    study.set_defaults(handler=cmd_accuracy_study)

    return parser


def cmd_estimate_risk(args, parser) -> None:
    run = Run("estimate-risk", args.out_dir, vars_config(args), args.seed)
    loss = LossSpec(args.loss)
    data = _load_data(args, args.data, run, multiclass=loss.is_multiclass)
    thetas = load_theta(args.theta)
    run.register_input(args.theta)
    fit_config = _fit_config(args)

    if loss.is_multiclass:
        marginals = _multiclass_marginals(args, parser)
        if len(thetas) != len(marginals):
            raise ConfigError(f"Expected {len(marginals)} classifiers in {args.theta}, got {len(thetas)}.")
        margins = [margins_batch(theta, data.features) for theta in thetas]
        fits = fit_multiclass_mixtures(margins, marginals, fit_config)
        report = plugin_risk_multiclass(fits, loss)
        payload = {
            "estimate": report.estimate,
            "n": data.n,
            "p_y": marginals.as_dict(),
            "loss": loss.name,
            "mu": [fit.as_dict()["mu"] for fit in fits],
            "sigma": [fit.as_dict()["sigma"] for fit in fits],
            "asympt_std": None,
        }
        empirical = empirical_risk_multiclass(data, thetas, loss).estimate if data.labeled else None
    else:
        marginals = _binary_marginals(args, parser)
        if len(thetas) != 1:
            raise ConfigError(f"Binary losses take one classifier, {args.theta} holds {len(thetas)}.")
        fit = fit_fixed_weight_mixture(margins_batch(thetas[0], data.features), marginals, fit_config)
        report = plugin_risk(fit, loss)
        payload = {
            "estimate": report.estimate,
            "n": data.n,
            "p_y": marginals.as_dict(),
            "loss": loss.name,
            "mu": fit.as_dict()["mu"],
            "sigma": fit.as_dict()["sigma"],
            "asympt_std": _asymptotic_std(fit, loss, data.n),
        }
        empirical = empirical_risk(data, thetas[0], loss).estimate if data.labeled else None

    if empirical is not None:
        abs_err = abs(empirical - report.estimate)
        payload.update(
            empirical=empirical,
            abs_err=abs_err,
            rel_err=abs_err / empirical if empirical > 0 else None,
        )
    run.write_json("estimate.json", payload)
    run.finish()
    print(json.dumps(to_jsonable(payload)))


def cmd_train(args, parser) -> None:
    run = Run("train", args.out_dir, vars_config(args), args.seed)
    marginals = _binary_marginals(args, parser)
    loss = _binary_loss(args.loss)
    data = _load_data(args, args.data, run)
    train_data, eval_data = _train_eval_split(args, data, run)

    theta0 = _initial_theta(args, run)
    hook = _evaluation_hook(args, train_data, eval_data, marginals, loss)
    theta, trace = _train(args, train_data, marginals, loss, theta0, hook)

    run.write_csv("trace.csv", trace.to_frame())
    save_theta([theta], run.path("theta.csv"))
    run.add_output(run.path("theta.csv"))

    summary = {
        "algo": args.algo,
        "status": trace.status,
        "iterations": len(trace),
        "risk_unsup": float(trace.risks[-1]),
    }
    if eval_data is not None:
        summary["risk_sup"] = empirical_risk(eval_data, theta, loss).estimate
        summary["error_rate"] = error_rate(theta, eval_data)
    if args.baseline:
        if not train_data.labeled:
            raise DataError("The supervised baseline needs labeled training data.")
        baseline = train_supervised_baseline(train_data, loss, supervised_instance)
        save_theta([baseline], run.path("theta_baseline.csv"))
        run.add_output(run.path("theta_baseline.csv"))
        if eval_data is not None:
            summary["baseline_error_rate"] = error_rate(baseline, eval_data)
    run.write_json("summary.json", summary)
    run.finish()


def cmd_misspec_sweep(args, parser) -> None:
    if not args.eval_data:
        parser.error("misspec-sweep requires --eval-data with true labels.")
    run = Run("misspec-sweep", args.out_dir, vars_config(args), args.seed)
    loss = _binary_loss(args.loss)
    data = _load_data(args, args.data, run)
    eval_data = _load_data(args, args.eval_data, run)
    if not eval_data.labeled:
        raise DataError(f"{args.eval_data}: evaluation data must be labeled.")
    fixed_theta = _initial_theta(args, run) if args.theta else None
    hook = EvaluationHook(eval_data, loss)

    rows = []
    for p in _float_list(args.grid, "--grid"):
        try:
            marginals = LabelMarginals.binary(p)
            if fixed_theta is not None:
                values = margins_batch(fixed_theta, data.features)
                fit = fit_fixed_weight_mixture(values, marginals, _fit_config(args))
                theta, risk, status = fixed_theta, plugin_risk(fit, loss).estimate, "evaluated"
            else:
                theta, trace = _train(args, data.without_labels(), marginals, loss, None, None)
                risk, status = float(trace.risks[-1]), trace.status
            risk_sup, rate = hook(theta)
            rows.append((p, risk, risk_sup, rate, status))
        except UnlabeledRiskError as exc:
            logger.warning("Assumed p(Y=1)=%g failed: %s", p, exc)
            rows.append((p, np.nan, np.nan, np.nan, f"error: {type(exc).__name__}: {exc}"))

    table = pd.DataFrame(rows, columns=["assumed_p", "risk_unsup", "R_n", "error_rate", "status"])
    run.write_csv("sweep.csv", table)
    run.finish()


def cmd_asymvar(args, parser) -> None:
    run = Run("asymvar", args.out_dir, vars_config(args), args.seed)
    builders = {
        "imbalance": (imbalance_grid, DEFAULT_IMBALANCE),
        "separation": (separation_grid, DEFAULT_SEPARATION),
        "variance-ratio": (variance_ratio_grid, DEFAULT_VARIANCE_RATIO),
    }
    builder, defaults = builders[args.axis]
    values = _float_list(args.values, "--values") if args.values else defaults
    table = accuracy_surface(builder(values), args.loss, threads=resolve_threads(args.threads))
    run.write_csv("accuracy.csv", table)
    run.finish()


def cmd_normality(args, parser) -> None:
    run = Run("normality", args.out_dir, vars_config(args), args.seed)
    data = _load_data(args, args.data, run)
    if args.theta:
        theta = load_theta(args.theta)[0]
        run.register_input(args.theta)
    else:
        rng = np.random.default_rng(args.seed)
        theta = ClassifierParams(rng.standard_normal(data.d))
    values = margins_batch(theta, data.features)

    if args.by_class:
        if not data.labeled:
            raise DataError("--by-class needs labeled data.")
        reports = {}
        for label in (1, -1):
            class_values = values.values[data.labels == label]
            fit = fit_single_gaussian(class_values)
            report = normality_check(class_values, fit, standardize=args.standardize)
            reports[str(label)] = report.as_dict()
            path = run.path(f"histogram_{'pos' if label == 1 else 'neg'}.csv")
            run.add_output(histogram_export(class_values, fit, args.bins, path, args.standardize))
        run.write_json("normality.json", {"by_class": reports})
    else:
        marginals = _binary_marginals(args, parser)
        fit = fit_fixed_weight_mixture(values, marginals, _fit_config(args))
        report = normality_check(values, fit, standardize=args.standardize)
        run.add_output(histogram_export(values, fit, args.bins, run.path("histogram.csv"), args.standardize))
        run.write_json("normality.json", report.as_dict())
    run.finish()


def cmd_synth(args, parser) -> None:
    config = SynthConfig(
        d=args.d,
        n=args.n,
        p_positive=args.py1,
        target_accuracy=args.accuracy,
        family=args.family,
        seed=args.seed,
        centered=args.centered,
    )
    run = Run("synth", args.out_dir, {"synth": config}, args.seed)
    delta, calibrated = calibrate_shift(config)
    dataset, theta_ref = generate_synthetic(config, shift=delta)

    if args.format == "csv":
        save_dense_csv(dataset, run.path("data.csv"))
        run.add_output(run.path("data.csv"))
    else:
        save_sparse(dataset, run.path("data.txt"))
        run.add_output(run.path("data.txt"))
    save_theta([theta_ref], run.path("theta_ref.csv"))
    run.add_output(run.path("theta_ref.csv"))
    run.write_json(
        "synth.json",
        {
            "delta": delta,
            "calibrated_accuracy": calibrated,
            "sample_accuracy": midpoint_accuracy(dataset, theta_ref),
            "positive_fraction": dataset.positive_fraction(),
            "config": config,
        },
    )
    run.finish()


def cmd_accuracy_study(args, parser) -> None:
    run = Run("accuracy-study", args.out_dir, vars_config(args), args.seed)
    table = accuracy_study(
        sizes=[int(v) for v in _float_list(args.sizes, "--sizes")],
        accuracies=_float_list(args.accuracies, "--accuracies"),
        priors=_float_list(args.priors, "--priors"),
        losses=[LossSpec(name).name for name in args.losses.split(",")],
        d=args.d,
        seeds=[args.seed + k for k in range(args.seeds)],
        family=args.family,
        threads=resolve_threads(args.threads),
    )
    run.write_csv("study.csv", table)
    run.write_csv("study_summary.csv", summarize_study(table))
    run.finish()


def _common_arguments(parser) -> None:
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, help="Worker threads (default: $UNLABELED_RISK_THREADS or 1).")
    parser.add_argument("--out-dir", required=True)
    parser.add_argument("-v", "--verbose", action="count", default=0)


def _data_arguments(parser) -> None:
    parser.add_argument("--data", required=True)
    parser.add_argument("--format", default="csv", choices=["csv", "sparse"])
    parser.add_argument("--dim", type=int, help="Declared feature dimension (required for sparse).")
    parser.add_argument("--header", action="store_true", help="Skip the first CSV line.")
    parser.add_argument("--labeled", action="store_true", help="The CSV holds a label column.")
    parser.add_argument("--label-column", type=int, default=-1)
    parser.add_argument("--eval-data", help="Held-out labeled data in the same format.")
    _common_arguments(parser)


def _prior_arguments(parser) -> None:
    parser.add_argument("--py1", type=float, help="Known p(Y=1) for binary problems.")
    parser.add_argument("--priors", help="Comma-separated p(Y=1..K) for multiclass problems.")


def _fit_arguments(parser) -> None:
    parser.add_argument("--restarts", type=int, default=fit_config_instance.restarts)
    parser.add_argument("--em-max-iter", type=int, default=fit_config_instance.max_iterations)
    parser.add_argument("--em-tol", type=float, default=fit_config_instance.loglik_rel_tolerance)


def _train_arguments(parser) -> None:
    parser.add_argument("--algo", default="grad", choices=["grad", "grid"])
    parser.add_argument("--loss", default="log", choices=["exp", "log", "hinge"])
    parser.add_argument("--theta", help="Initial (or, for sweeps, fixed) classifier weights CSV.")
    parser.add_argument("--step-size", type=float, default=grad_descent_instance.step_size)
    parser.add_argument("--max-iter", type=int, default=grad_descent_instance.max_iterations)
    parser.add_argument("--tol", type=float, default=grad_descent_instance.tolerance)
    parser.add_argument("--refit", default=RefitMode.WARM_START.value, choices=[m.value for m in RefitMode])
    parser.add_argument("--grid-points", type=int, default=grid_search_instance.grid_points)
    parser.add_argument("--window", type=float, default=grid_search_instance.window)
    parser.add_argument("--window-mode", default=WindowMode.FREE.value, choices=[m.value for m in WindowMode])
    parser.add_argument("--shrink", type=float, default=grid_search_instance.shrink)
    parser.add_argument("--max-sweeps", type=int, default=grid_search_instance.max_sweeps)


def _fit_config(args):
    return replace(
        fit_config_instance,
        restarts=args.restarts,
        max_iterations=args.em_max_iter,
        loglik_rel_tolerance=args.em_tol,
        seed=args.seed,
    )


def _train(args, data, marginals, loss, theta0, hook):
    threads = resolve_threads(args.threads)
    fit_config = _fit_config(args)
    if args.algo == "grad":
        config = replace(
            grad_descent_instance,
            step_size=args.step_size,
            max_iterations=args.max_iter,
            tolerance=args.tol,
            seed=args.seed,
            refit=RefitMode(args.refit),
            fit_config=fit_config,
        )
        return train_gradient_descent(data, marginals, loss, config, theta0, hook, threads)
    config = replace(
        grid_search_instance,
        grid_points=args.grid_points,
        window=args.window,
        shrink=args.shrink,
        max_sweeps=args.max_sweeps,
        seed=args.seed,
        window_mode=WindowMode(args.window_mode),
        refit=RefitMode(args.refit),
        fit_config=fit_config,
    )
    return train_grid_search(data, marginals, loss, config, hook, theta0, threads)


def _load_data(args, path, run: Run, multiclass: bool = False) -> Dataset:
    if args.format == "sparse":
        if args.dim is None:
            raise ConfigError("--dim is required for sparse data.")
        data = load_sparse(path, args.dim)
    else:
        data = load_dense_csv(
            path,
            has_labels=args.labeled,
            label_column=args.label_column,
            dim=args.dim,
            header=args.header,
            multiclass=multiclass,
        )
    run.register_input(path)
    logger.info("Loaded %r from %s", data, path)
    return data


def _train_eval_split(args, data: Dataset, run: Run):
    if args.eval_data:
        eval_data = _load_data(args, args.eval_data, run)
        if not eval_data.labeled:
            raise DataError(f"{args.eval_data}: evaluation data must be labeled.")
        return data, eval_data
    if args.split is not None:
        if not data.labeled:
            raise DataError("--split needs labeled data to hold out.")
        return data.split(args.split, seed=args.seed)
    return data, None


def _evaluation_hook(args, train_data: Dataset, eval_data: Optional[Dataset], marginals, loss):
    if eval_data is None:
        return None
    if args.split is not None and not args.eval_data:
        return SplitEvaluationHook(train_data, eval_data, marginals, loss, _fit_config(args))
    return EvaluationHook(eval_data, loss)


def _initial_theta(args, run: Run) -> Optional[ClassifierParams]:
    if not args.theta:
        return None
    run.register_input(args.theta)
    return load_theta(args.theta)[0]


def _binary_marginals(args, parser) -> LabelMarginals:
    if args.py1 is None:
        parser.error("--py1 is required.")
    return LabelMarginals.binary(args.py1)


def _multiclass_marginals(args, parser) -> LabelMarginals:
    if not args.priors:
        parser.error("--priors is required for multiclass losses.")
    return LabelMarginals.multiclass(_float_list(args.priors, "--priors"))


def _binary_loss(name: str) -> LossSpec:
    loss = LossSpec(name)
    if loss.is_multiclass:
        raise ConfigError("Training takes a binary loss.")
    return loss


def _asymptotic_std(fit, loss, n: int) -> Optional[float]:
    try:
        return delta_method_risk_variance(fit, loss).std_error(n)
    except UnlabeledRiskError as exc:
        logger.warning("Asymptotic standard error unavailable: %s", exc)
        return None


def _float_list(text: str, flag: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{flag} must be a comma-separated list of numbers.") from None


def vars_config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "handler"}


def _report_error(exc: Exception, exit_code: int) -> None:
    error = {"error": {"type": type(exc).__name__, "message": str(exc), "exit_code": exit_code}}
    print(json.dumps(error), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())

"""
cli.py

The command line interface.

    debiasing fit          --x X.csv --y y.csv --penalty lasso --lambda 0.1 [--out beta.csv]
    debiasing debias       ... [--cov Sigma.csv] [--direction 1]
    debiasing ci           ... [--alpha 0.05]
    debiasing simulate     --config figure1 [--out results] [--reps N] [--seed S] [--v0 resid]
    debiasing stein-check  --fn linear-identity --n 50 --reps 100000

Reports are printed on stdout as YAML. The exit code is 0 on success, 1 on an
input error and 2 on a numerical failure.
"""

import argparse
import pathlib
import sys
import typing

import numpy as np
import pandas
import yaml

from debiasing import __version__, debias, errors, inference, sim, stein
from debiasing import penalty as penalties
from debiasing.config import ExperimentConfig, parse_config, shipped_config, SHIPPED
from debiasing.fit import DEFAULT_TOL
from debiasing.fit import fit as solve
from debiasing.model import CovarianceSpec, RegressionInstance, normalize_direction
from debiasing.utils import logging as logs
from debiasing.utils.logging import LogLevels, log


class UsageError(errors.InputError):
    """Unknown commands or flags"""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> typing.NoReturn:
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _plain(value: typing.Any) -> typing.Any:
    """Converts numpy values so that yaml.safe_dump accepts them"""
    if isinstance(value, dict):
        return {str(key): _plain(element) for key, element in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(element) for element in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def _print(report: typing.Dict[str, typing.Any]) -> None:
    sys.stdout.write(yaml.safe_dump(_plain(report), sort_keys=False, allow_unicode=True))


def parse_groups(value: str, p: int) -> typing.List[typing.List[int]]:
    """
    Parses --groups

    Either a group size ("30", contiguous blocks) or one-based index lists
    separated by ";" where "a-b" is the range a..b ("1-3;4,5,6").
    """
    value = value.strip()
    if value.isdigit():
        size = int(value)
        if size < 1 or p % size != 0:
            raise errors.InputError(errors.error_message("Invalid groups", reason="p = {} is not a multiple of {}".format(p, size)))
        return [list(range(start, start + size)) for start in range(0, p, size)]
    groups = []
    for chunk in filter(None, (part.strip() for part in value.split(";"))):
        group = []
        for item in filter(None, (part.strip() for part in chunk.split(","))):
            try:
                if "-" in item:
                    first, last = item.split("-", 1)
                    group.extend(range(int(first) - 1, int(last)))
                else:
                    group.append(int(item) - 1)
            except ValueError as err:
                raise errors.InputError(errors.error_message("Invalid groups", reason=item)) from err
        groups.append(group)
    return groups


def parse_direction(value: str, p: int) -> np.ndarray:
    """A one-based canonical index ("1") or the comma separated entries of a"""
    items = [item.strip() for item in value.split(",") if item.strip()]
    try:
        if len(items) == 1 and items[0].isdigit():
            index = int(items[0])
            if not 1 <= index <= p:
                raise errors.InputError(errors.error_message("Invalid direction", reason="index {} outside 1..{}".format(index, p)))
            return np.eye(p)[index - 1]
        vector = np.array([float(item) for item in items])
    except ValueError as err:
        raise errors.InputError(errors.error_message("Invalid direction", reason=value)) from err
    if vector.shape[0] != p:
        raise errors.InputError(errors.error_message("Invalid direction", reason="{} entries, expected p = {}".format(vector.shape[0], p)))
    return vector


def _penalty(args: argparse.Namespace, p: int) -> penalties.Penalty:
    parameters = {"lambda": args.lam, "mu": args.mu}
    if args.penalty == penalties.Kinds.GROUP_LASSO:
        if args.groups is None:
            raise errors.InputError(errors.error_message("Invalid penalty", reason="'--groups' is required for group_lasso"))
        parameters["groups"] = parse_groups(args.groups, p)
    pen = penalties.make_penalty(args.penalty, **{key: value for key, value in parameters.items() if value is not None})
    pen.check_dimension(p)
    return pen


def _instance(args: argparse.Namespace) -> RegressionInstance:
    if args.x is None or args.y is None:
        raise errors.InputError(errors.error_message("Missing data", reason="'--x' and '--y' are required"))
    return RegressionInstance.from_csv(args.x, args.y)


def _covariance(args: argparse.Namespace, p: int) -> CovarianceSpec:
    if args.cov is None:
        log("No covariance given, using Σ = I", level=LogLevels.WARNING)
        return CovarianceSpec.identity(p)
    cov = CovarianceSpec.from_csv(args.cov)
    if cov.p != p:
        raise errors.InputError(errors.error_message("Invalid covariance", reason="{0}×{0}, expected p = {1}".format(cov.p, p)))
    return cov


def _fitted(args: argparse.Namespace):
    instance = _instance(args)
    pen = _penalty(args, instance.p)
    return instance, pen, solve(instance, pen, tol=args.tol)


def run_fit(args: argparse.Namespace) -> None:
    instance, pen, result = _fitted(args)
    _print(result.to_dict())
    if args.out is not None:
        pandas.DataFrame({"beta": result.beta_hat}).to_csv(args.out, index=False, lineterminator="\n")
        log("β̂ written to {}".format(args.out), level=LogLevels.INFO)


def run_debias(args: argparse.Namespace) -> None:
    instance, pen, result = _fitted(args)
    cov = _covariance(args, instance.p)
    direction = normalize_direction(parse_direction(args.direction, instance.p), cov, instance.X)
    report = debias.debias_report(result, pen, instance, cov, [direction])
    _print({"fit": result.to_dict(), "debias": report.to_dict()})
    if args.out is not None:
        pandas.DataFrame({"beta_debias": report.beta_debias}).to_csv(args.out, index=False, lineterminator="\n")


def run_ci(args: argparse.Namespace) -> None:
    instance, pen, result = _fitted(args)
    cov = _covariance(args, instance.p)
    direction = normalize_direction(parse_direction(args.direction, instance.p), cov, instance.X)
    estimates = inference.variance_estimates(result, direction, pen, instance)
    intervals = inference.confidence_intervals(result, direction, pen, args.alpha, estimates=estimates)
    _print({"theta_hat": estimates.theta_hat, "variance": estimates.to_dict(), "intervals": intervals.to_dict()})


def _experiment(value: str) -> ExperimentConfig:
    path = pathlib.Path(value)
    if not path.is_file() and (SHIPPED / "{}.yaml".format(value)).is_file():
        return shipped_config(value)
    return parse_config(path)


def run_simulate(args: argparse.Namespace) -> None:
    if args.config is None:
        raise errors.InputError(errors.error_message("Missing configuration", reason="'--config' is required"))
    config = _experiment(args.config)
    if args.reps is not None:
        config.mc.reps = args.reps
    if args.seed is not None:
        config.mc.seed = args.seed
    if args.alpha is not None:
        config.mc.alpha = args.alpha
    if args.v0 is not None:
        config.mc.v0 = args.v0
    result = sim.run_experiment(config)
    prefix = args.out or "results"
    sim.write_results(result, prefix + ".reps.csv")
    sim.write_aggregate(result, prefix + ".aggregate.csv")
    sim.write_qq(result, prefix + ".qq.csv")
    aggregates = result.aggregates
    _print({
        "reps": result.reps,
        "failures": len(result.failures),
        "low_rep": result.low_rep,
        "v0": config.mc.v0,
        "kappa": config.mc.kappa,
        "sparsity_rate": sim.sparsity_condition_check(result),
        "pivots": aggregates[["penalty_id", "direction_id", "lambda", "pivot_sd", "ks"]].to_dict(orient="records"),
        "files": [prefix + suffix for suffix in (".reps.csv", ".aggregate.csv", ".qq.csv")]
    })


def run_stein_check(args: argparse.Namespace) -> None:
    if args.fn is None:
        raise errors.InputError(errors.error_message("Missing function", reason="'--fn' is required",
                                                     message="available: {}".format(", ".join(sorted(stein.REGISTRY)))))
    seed = 0 if args.seed is None else args.seed
    function = stein.make_stein_function(args.fn, args.n, seed=seed)
    reps = 100000 if args.reps is None else args.reps
    report = {"function": args.fn, "n": args.n, "second_order": stein.second_order_stein_check(function, reps=reps, seed=seed).to_dict()}
    if reps >= 1000:
        report["approximation"] = stein.approximation_report(function, reps=min(reps, 10000), seed=seed).to_dict()
    _print(report)


COMMANDS = {
    "fit": run_fit,
    "debias": run_debias,
    "ci": run_ci,
    "simulate": run_simulate,
    "stein-check": run_stein_check
}


def _positive(cast: typing.Callable[[str], typing.Any]) -> typing.Callable[[str], typing.Any]:
    def parse(value: str):
        try:
            result = cast(value)
        except ValueError as err:
            raise argparse.ArgumentTypeError("invalid value '{}'".format(value)) from err
        if not result > 0:
            raise argparse.ArgumentTypeError("'{}' should be positive".format(value))
        return result
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="debiasing", description="De-biased inference for convex-regularized least squares")
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    data = _Parser(add_help=False)
    data.add_argument("--x", help="CSV design with columns x1..xp")
    data.add_argument("--y", help="CSV response with a column y")
    data.add_argument("--penalty", default="lasso", choices=["lasso", "group_lasso", "ridge", "elastic_net", "least_squares", "log_cosh"])
    data.add_argument("--lambda", dest="lam", type=_positive(float), help="λ")
    data.add_argument("--mu", type=_positive(float), help="μ (ridge, elastic net)")
    data.add_argument("--groups", help="a group size or one-based index lists, '1-3;4,5,6'")
    data.add_argument("--tol", type=_positive(float), default=DEFAULT_TOL, help="KKT tolerance")
    data.add_argument("--out", help="output CSV")

    inference_flags = _Parser(add_help=False)
    inference_flags.add_argument("--cov", help="CSV covariance (default: identity)")
    inference_flags.add_argument("--direction", default="1", help="a one-based index or the comma separated entries of a")
    inference_flags.add_argument("--alpha", type=_positive(float), default=0.05)

    common = _Parser(add_help=False)
    common.add_argument("-d", "--debug", action="store_true", help="print debug logs")

    commands.add_parser("fit", parents=[data, common], help="fit the estimator")
    commands.add_parser("debias", parents=[data, inference_flags, common], help="d̂f, w₀ and the de-biased estimates")
    commands.add_parser("ci", parents=[data, inference_flags, common], help="the three confidence intervals")

    simulate = commands.add_parser("simulate", parents=[common], help="run a Monte Carlo experiment")
    simulate.add_argument("--config", help="a YAML configuration or the name of a shipped one")
    simulate.add_argument("--out", help="prefix of the CSV files (default: results)")
    simulate.add_argument("--reps", type=_positive(int))
    simulate.add_argument("--seed", type=int)
    simulate.add_argument("--alpha", type=_positive(float))
    simulate.add_argument("--v0", choices=list(inference.VARIANCE_KINDS), help="the V₀ of the headline pivot columns")

    check = commands.add_parser("stein-check", parents=[common], help="check the Stein formulas on a test function")
    check.add_argument("--fn", help="one of: {}".format(", ".join(sorted(stein.REGISTRY))))
    check.add_argument("--n", type=_positive(int), default=50)
    check.add_argument("--reps", type=_positive(int))
    check.add_argument("--seed", type=int)
    return parser


def main(argv: typing.Sequence[str] = None) -> int:
    """
    Runs a command and returns its exit code
    """
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "debug", False):
            logs.DEBUG_MODE = True
        COMMANDS[args.command](args)
    except errors.NumericalError as err:
        log(str(err), level=LogLevels.ERROR)
        return 2
    except (errors.InputError, FileNotFoundError) as err:
        log(str(err), level=LogLevels.ERROR)
        return 1
    except SystemExit as err:
        # --help and --version
        return 0 if not err.code else 1
    return 0

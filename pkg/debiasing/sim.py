"""
sim.py

Monte Carlo experiments: replications of the fit / de-bias / infer pipeline on
a fixed (β, Σ) with fresh (X, ε) at every replication.

Replications run on a process pool. Replication `rep` draws from the stream
keyed by (master_seed, rep) and results are gathered in replication order, so
an experiment is reproducible whatever the number of workers.
"""

import concurrent.futures
import os
import pathlib
import typing

import numpy as np
import pandas
import psutil
import scipy.special
import scipy.stats

from debiasing import debias, errors, inference
from debiasing import penalty as penalties
from debiasing.config import ExperimentConfig
from debiasing.fit import fit as solve
from debiasing.model import CovarianceSpec, normalize_direction, sample_instance
from debiasing.utils import rng
from debiasing.utils.logging import LogLevels, log

PathType = typing.Union[str, pathlib.Path]

RESULT_COLUMNS = ["rep", "penalty_id", "lambda", "direction_id", "df", "active_size", "theta_hat",
                  "pivot_resid", "pivot_vhat", "pivot_vcheck",
                  "ci_narrow_lo", "ci_narrow_hi", "ci_spike_lo", "ci_spike_hi", "ci_quad_lo", "ci_quad_hi", "ci_quad_valid",
                  "pred_err", "dir_err_sq", "diag_item_v", "w0_dot_r"]
"""The per-replication columns"""

EXTRA_COLUMNS = ["theta", "pivot_vstar", "tau_hat_sq", "diag_item_iv"]
"""Appended after RESULT_COLUMNS"""

PIVOT_COLUMNS = {"resid": "pivot_resid", "vhat": "pivot_vhat", "vcheck": "pivot_vcheck", "vstar": "pivot_vstar"}
INTERVAL_COLUMNS = {"narrow": "ci_narrow", "spike": "ci_spike", "quadratic": "ci_quad"}

FAILURE_LIMIT = 0.05
"""The largest accepted fraction of failed replications"""

LOW_REP_LIMIT = 20
"""Below this number of replications the aggregates are flagged"""


def worker_count(threads: int = None) -> int:
    """
    The number of worker processes

    `threads` when given, otherwise the hardware parallelism capped by DEBIAS_THREADS.
    """
    if threads is not None:
        return max(1, int(threads))
    available = psutil.cpu_count(logical=True) or 1
    cap = os.environ.get("DEBIAS_THREADS", "").strip()
    if cap:
        try:
            return max(1, min(available, int(cap)))
        except ValueError as err:
            raise errors.InputError(errors.error_message("Invalid DEBIAS_THREADS", reason=cap)) from err
    return available


class _Setup():
    """Everything shared by the replications of an experiment"""

    def __init__(self, config: ExperimentConfig) -> None:
        self.n = config.n
        self.sigma = config.sigma
        self.beta = config.beta()
        self.cov = config.covariance(self.beta)
        self.directions = config.direction_vectors(self.cov)
        self.grid = config.penalty_grid()
        self.seed = config.mc.seed
        self.alpha = config.mc.alpha
        self.tol = config.mc.tol
        self.max_iter = config.mc.max_iter
        # warm starts go down each kind's grid from its largest tuning parameter
        kinds = list(dict.fromkeys(pen.kind for pen in self.grid))
        self.order = sorted(range(len(self.grid)), key=lambda index: (kinds.index(self.grid[index].kind), -self.grid[index].tuning))


class _Failure():
    def __init__(self, rep: int, reason: str) -> None:
        self.rep = rep
        self.reason = reason


def _nan_safe(function: typing.Callable[[], float]) -> float:
    try:
        return float(function())
    except errors.NumericalError:
        return float("nan")


def _replication(setup: _Setup, rep: int) -> typing.Union[typing.List[typing.Dict[str, typing.Any]], _Failure]:
    generator = rng.child_generator(setup.seed, rep)
    try:
        instance = sample_instance(setup.cov, setup.beta, setup.sigma, setup.n, generator)
        directions = [normalize_direction(a, setup.cov, instance.X) for a in setup.directions]
        rows = []
        warm = {}
        for penalty_id in setup.order:
            pen = setup.grid[penalty_id]
            result = solve(instance, pen, tol=setup.tol, max_iter=setup.max_iter, beta_init=warm.get(pen.kind))
            warm[pen.kind] = result.beta_hat
            operator = debias.hat_operator(result, pen, instance)
            degrees = debias.df(result, pen, instance)
            error = result.beta_hat - setup.beta
            residual_sq = float(result.residual @ result.residual)
            for direction_id, direction in enumerate(directions):
                estimates = inference.variance_estimates(result, direction, pen, instance, operator=operator, degrees=degrees)
                intervals = inference.confidence_intervals(result, direction, pen, setup.alpha, estimates=estimates)
                theta = direction.theta(setup.beta)
                row = {
                    "rep": rep,
                    "penalty_id": penalty_id,
                    "lambda": pen.tuning,
                    "direction_id": direction_id,
                    "df": degrees,
                    "active_size": result.active_size,
                    "theta_hat": estimates.theta_hat
                }
                for kind, column in PIVOT_COLUMNS.items():
                    row[column] = _nan_safe(lambda: inference.pivot(result, direction, pen, instance, theta, v0=kind, estimates=estimates))
                for kind, column in INTERVAL_COLUMNS.items():
                    row[column + "_lo"], row[column + "_hi"] = intervals[kind].lo, intervals[kind].hi
                row["ci_quad_valid"] = int(intervals.quadratic.valid)
                row["pred_err"] = setup.cov.sqrt_norm_sq(error)
                row["dir_err_sq"] = float(direction.a0 @ error) ** 2
                row["diag_item_v"] = estimates.z0_dot_residual ** 2 / (setup.n * residual_sq) if residual_sq > 0 else float("nan")
                row["w0_dot_r"] = estimates.w0_dot_residual
                row["theta"] = theta
                row["tau_hat_sq"] = residual_sq / setup.n / (1 - degrees / setup.n) ** 2
                row["diag_item_iv"] = setup.n * row["dir_err_sq"] / residual_sq if residual_sq > 0 else float("nan")
                rows.append(row)
        return rows
    except errors.NumericalError as err:
        return _Failure(rep, "{}: {}".format(type(err).__name__, err))


_WORKER_SETUP: typing.Optional[_Setup] = None


def _initialize_worker(setup: _Setup) -> None:
    global _WORKER_SETUP
    _WORKER_SETUP = setup


def _run_in_worker(rep: int):
    return _replication(_WORKER_SETUP, rep)


class ExperimentResult():
    """
    The per-replication records of an experiment with its failures
    """

    def __init__(self, config: ExperimentConfig, records: pandas.DataFrame, failures: typing.List[typing.Tuple[int, str]], reps: int) -> None:
        self.config = config
        self.records = records
        self.failures = failures
        """(rep, reason) of every excluded replication"""
        self.reps = int(reps)
        self._aggregates = None

    @property
    def completed(self) -> int:
        return self.reps - len(self.failures)

    @property
    def low_rep(self) -> bool:
        """Whether too few replications completed for the aggregates to be meaningful"""
        return self.completed < LOW_REP_LIMIT

    @property
    def aggregates(self) -> pandas.DataFrame:
        if self._aggregates is None:
            self._aggregates = aggregate(self)
        return self._aggregates

    def pivots(self, penalty_id: int = 0, direction_id: int = 0, v0: inference.VarianceKind = None) -> np.ndarray:
        """The pivot values of one (penalty, direction) pair, with the configured V₀ by default"""
        return self._select(penalty_id, direction_id)[PIVOT_COLUMNS[v0 or self.config.mc.v0]].to_numpy(dtype=float)

    def _select(self, penalty_id: int, direction_id: int) -> pandas.DataFrame:
        records = self.records
        return records[(records["penalty_id"] == penalty_id) & (records["direction_id"] == direction_id)]

    def __repr__(self) -> str:
        return "ExperimentResult(reps={}, failures={}, rows={})".format(self.reps, len(self.failures), len(self.records))


def _records(rows: typing.List[typing.Dict[str, typing.Any]]) -> pandas.DataFrame:
    rows = sorted(rows, key=lambda row: (row["rep"], row["penalty_id"], row["direction_id"]))
    return pandas.DataFrame(rows, columns=RESULT_COLUMNS + EXTRA_COLUMNS)


def run_experiment(config: ExperimentConfig, threads: int = None) -> ExperimentResult:
    """
    Runs every replication of an experiment

    Parameters
    ----------
    config: ExperimentConfig
    threads: int, default=None
        The number of worker processes (see `worker_count`)

    Raises
    ------
    ExperimentError
        If more than 5% of the replications failed
    """
    setup = _Setup(config)
    reps = config.mc.reps
    workers = min(worker_count(threads), reps)
    smooth = any(isinstance(pen, penalties.Smooth) for pen in setup.grid)
    log("Running {} replications on {} worker(s)".format(reps, workers), level=LogLevels.INFO)
    if workers <= 1 or smooth:
        outcomes = [_replication(setup, rep) for rep in range(reps)]
    else:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers, initializer=_initialize_worker, initargs=(setup,)) as executor:
            outcomes = list(executor.map(_run_in_worker, range(reps), chunksize=max(1, reps // (4 * workers))))

    rows, failures = [], []
    for outcome in outcomes:
        if isinstance(outcome, _Failure):
            log("Replication {} excluded ({})".format(outcome.rep, outcome.reason), level=LogLevels.WARNING)
            failures.append((outcome.rep, outcome.reason))
        else:
            rows.extend(outcome)
    if len(failures) > FAILURE_LIMIT * reps:
        raise errors.ExperimentError(errors.error_message("Too many failed replications",
                                                          reason="{} out of {}".format(len(failures), reps),
                                                          message=failures[0][1]))
    result = ExperimentResult(config, _records(rows), failures, reps)
    if result.low_rep:
        log("Only {} replications completed, the aggregates are indicative".format(result.completed), level=LogLevels.WARNING)
    rate = sparsity_condition_check(result)
    if rate < 1:
        log("The sparsity condition |Ŝ| ≤ κn/2 (κ = {}) holds in {:.1%} of the fits".format(config.mc.kappa, rate), level=LogLevels.WARNING)
    return result


def ks_normal(samples: typing.Any) -> float:
    """
    sup |F̂ₘ − Φ|, the Kolmogorov-Smirnov distance to N(0, 1)

    Raises
    ------
    InputError
        With fewer than 20 samples
    """
    samples = np.asarray(samples, dtype=float).reshape(-1)
    if samples.shape[0] < 20:
        raise errors.InputError(errors.error_message("Too few samples", reason="the KS distance needs at least 20 samples"))
    return float(scipy.stats.kstest(samples, "norm").statistic)


def qq_pairs(samples: typing.Any) -> typing.Tuple[np.ndarray, np.ndarray]:
    """
    (theoretical quantile, order statistic) pairs

    The theoretical quantiles are Φ⁻¹((i − 0.5)/m), i = 1..m.
    """
    samples = np.sort(np.asarray(samples, dtype=float).reshape(-1))
    count = samples.shape[0]
    return scipy.special.ndtri((np.arange(1, count + 1) - 0.5) / count), samples


def _sd(values: np.ndarray) -> float:
    values = values[np.isfinite(values)]
    return float(np.std(values, ddof=1)) if values.shape[0] >= 2 else float("nan")


def _mean(values: np.ndarray) -> float:
    values = values[np.isfinite(values)]
    return float(np.mean(values)) if values.shape[0] else float("nan")


def _ks(values: np.ndarray) -> float:
    values = values[np.isfinite(values)]
    return ks_normal(values) if values.shape[0] >= 20 else float("nan")


def aggregate(result: ExperimentResult) -> pandas.DataFrame:
    """
    One row per (penalty, direction): pivot spreads and KS distances for each V₀,
    coverage and mean width of each interval, τ̂² and the error means

    `pivot_sd` and `ks` repeat the columns of the configured V₀ (`mc.v0`) and
    `sparsity_rate` uses the configured κ (`mc.kappa`).

    Invalid quadratic intervals are left out of the quadratic coverage and width
    and counted in `quad_invalid_rate`.
    """
    headline, kappa = result.config.mc.v0, result.config.mc.kappa
    rows = []
    records = result.records
    keys = records[["penalty_id", "direction_id"]].drop_duplicates().sort_values(["penalty_id", "direction_id"], kind="stable")
    for penalty_id, direction_id in keys.itertuples(index=False):
        group = result._select(penalty_id, direction_id)
        theta = group["theta"].to_numpy(dtype=float)
        row = {"penalty_id": int(penalty_id), "direction_id": int(direction_id), "lambda": float(group["lambda"].iloc[0]),
               "reps": int(group.shape[0]), "low_rep": int(group.shape[0] < LOW_REP_LIMIT), "v0": headline}
        for kind, column in PIVOT_COLUMNS.items():
            row["pivot_sd_" + kind] = _sd(group[column].to_numpy(dtype=float))
        for kind, column in PIVOT_COLUMNS.items():
            row["ks_" + kind] = _ks(group[column].to_numpy(dtype=float))
        row["pivot_sd"], row["ks"] = row["pivot_sd_" + headline], row["ks_" + headline]
        row["sparsity_rate"] = sparsity_condition_check(result, kappa, penalty_id=int(penalty_id))
        valid = group["ci_quad_valid"].to_numpy(dtype=int) == 1
        for kind, column in INTERVAL_COLUMNS.items():
            lo, hi = group[column + "_lo"].to_numpy(dtype=float), group[column + "_hi"].to_numpy(dtype=float)
            keep = valid if kind == "quadratic" else np.ones_like(valid)
            covered = (lo <= theta) & (theta <= hi)
            row["coverage_" + kind] = float(np.mean(covered[keep])) if np.any(keep) else float("nan")
            row["mean_width_" + kind] = float(np.mean((hi - lo)[keep])) if np.any(keep) else float("nan")
        row["quad_invalid_rate"] = float(np.mean(~valid))
        row["tau_hat_sq_mean"] = _mean(group["tau_hat_sq"].to_numpy(dtype=float))
        for column in ("pred_err", "dir_err_sq"):
            values = group[column].to_numpy(dtype=float)
            row[column + "_mean"], row[column + "_sd"] = _mean(values), _sd(values)
        row["diag_item_iv_median"] = float(np.nanmedian(group["diag_item_iv"].to_numpy(dtype=float))) if group.shape[0] else float("nan")
        rows.append(row)
    columns = ["penalty_id", "direction_id", "lambda", "reps", "low_rep", "v0", "pivot_sd", "ks", "sparsity_rate"] + \
        ["pivot_sd_" + kind for kind in PIVOT_COLUMNS] + ["ks_" + kind for kind in PIVOT_COLUMNS] + \
        ["coverage_" + kind for kind in INTERVAL_COLUMNS] + ["mean_width_" + kind for kind in INTERVAL_COLUMNS] + \
        ["quad_invalid_rate", "tau_hat_sq_mean", "pred_err_mean", "pred_err_sd", "dir_err_sq_mean", "dir_err_sq_sd", "diag_item_iv_median"]
    return pandas.DataFrame(rows, columns=columns)


def sparsity_condition_check(result: ExperimentResult, kappa: float = None, penalty_id: int = None) -> float:
    """
    The fraction of fits with |Ŝ| ≤ κn/2

    Parameters
    ----------
    kappa: float, default=None
        The configured κ when None
    penalty_id: int, default=None
        Restricts the count to one penalty of the grid
    """
    kappa = result.config.mc.kappa if kappa is None else kappa
    records = result.records
    if penalty_id is not None:
        records = records[records["penalty_id"] == penalty_id]
    fits = records.drop_duplicates(["rep", "penalty_id"])
    if fits.empty:
        return float("nan")
    return float(np.mean(fits["active_size"].to_numpy() <= kappa * result.config.n / 2))


def tau_hat_sq(result: ExperimentResult) -> typing.Dict[int, np.ndarray]:
    """τ̂² = (1 − d̂f/n)⁻²‖y − Xβ̂‖²/n per penalty, one value per replication"""
    fits = result.records.drop_duplicates(["rep", "penalty_id"])
    return {int(penalty_id): group["tau_hat_sq"].to_numpy(dtype=float) for penalty_id, group in fits.groupby("penalty_id", sort=True)}


class OracleResult():
    """The noiseless oracle β* and its risk R* = σ² + ‖Σ^{1/2}(β* − β)‖²"""

    def __init__(self, beta_star: np.ndarray, r_star: float, iterations: int) -> None:
        self.beta_star = beta_star
        self.r_star = float(r_star)
        self.iterations = int(iterations)

    def __repr__(self) -> str:
        return "OracleResult(r_star={:.6g}, iterations={})".format(self.r_star, self.iterations)


def oracle_beta_star(beta: typing.Any, cov: CovarianceSpec, pen: penalties.Penalty, tol: float = 1e-10,
                     sigma: float = 1.0, max_iter: int = 100000) -> OracleResult:
    """
    argmin_b ½‖Σ^{1/2}(β − b)‖² + g(b) by proximal gradient with step 1/‖Σ‖op

    Converged when the gradient mapping ‖b − prox(b − Σ(b − β)/L)‖∞·L is below `tol`.

    Raises
    ------
    NotConverged
        After `max_iter` iterations
    """
    beta = np.asarray(beta, dtype=float)
    lipschitz = cov.operator_norm()
    step = 1.0 / lipschitz
    b = np.zeros_like(beta)
    mapping = float("inf")
    for iteration in range(1, int(max_iter) + 1):
        candidate = pen.prox(b - step * (cov.matrix @ (b - beta)), step)
        mapping = float(np.max(np.abs(candidate - b), initial=0.0)) * lipschitz
        b = candidate
        if mapping <= tol:
            return OracleResult(b, sigma ** 2 + cov.sqrt_norm_sq(b - beta), iteration)
    raise errors.NotConverged(errors.error_message("The oracle did not converge", reason="after {} iterations".format(max_iter)),
                              beta=b, violation=mapping, iterations=int(max_iter))


def _write(frame: pandas.DataFrame, path: PathType) -> None:
    frame.to_csv(path, index=False, lineterminator="\n")


def write_results(result: ExperimentResult, path: PathType) -> None:
    """Writes the per-replication CSV (header only when there are no records)"""
    _write(result.records, path)


def write_aggregate(result: ExperimentResult, path: PathType) -> None:
    _write(result.aggregates, path)


def write_qq(result: ExperimentResult, path: PathType) -> None:
    """Writes the QQ pairs of every pivot, in long format"""
    frames = []
    keys = result.records[["penalty_id", "direction_id"]].drop_duplicates().sort_values(["penalty_id", "direction_id"], kind="stable")
    for penalty_id, direction_id in keys.itertuples(index=False):
        for kind in PIVOT_COLUMNS:
            values = result.pivots(penalty_id, direction_id, kind)
            values = values[np.isfinite(values)]
            theoretical, ordered = qq_pairs(values)
            frames.append(pandas.DataFrame({"penalty_id": int(penalty_id), "direction_id": int(direction_id), "v0": kind,
                                            "theoretical_quantile": theoretical, "order_statistic": ordered}))
    columns = ["penalty_id", "direction_id", "v0", "theoretical_quantile", "order_statistic"]
    _write(pandas.concat(frames, ignore_index=True) if frames else pandas.DataFrame(columns=columns), path)

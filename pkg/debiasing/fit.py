"""
fit.py

Solvers for β̂ = argmin_b ‖y − Xb‖²/(2n) + g(b) and their KKT certificates.

Every solver declares convergence on the KKT violation, never on the change of
the iterate, and the gradient Xᵀ(y − Xb)/n is recomputed from scratch before
the final check.
"""

import typing

import numpy as np

from debiasing import errors
from debiasing import penalty as penalties
from debiasing.model import RegressionInstance
from debiasing.utils import linalg
from debiasing.utils.logging import LogLevels, log

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 100000


def zero_threshold(beta: np.ndarray) -> float:
    """1e-8·max(1, ‖β̂‖∞), below which a coefficient is considered zero"""
    return 1e-8 * max(1.0, float(np.max(np.abs(beta), initial=0.0)))


class KKTReport():
    """The optimality certificate of a fit"""

    def __init__(self, max_violation: float, strict_slacks: np.ndarray, inactive: np.ndarray) -> None:
        self.max_violation = float(max_violation)
        self.strict_slacks = np.asarray(strict_slacks, dtype=float)
        """λ − |Xⱼᵀr/n| per inactive coordinate, or nλₖ − ‖X_{Gₖ}ᵀr‖ per inactive group"""
        self.inactive = np.asarray(inactive, dtype=int)
        """The inactive coordinates (or groups) the slacks refer to"""

    @property
    def strict(self) -> bool:
        """Whether every inactive coordinate (or group) satisfies its bound strictly"""
        return bool(np.all(self.strict_slacks > 0))

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {
            "max_violation": self.max_violation,
            "strict": self.strict,
            "min_slack": float(self.strict_slacks.min()) if self.strict_slacks.size else None
        }

    def __repr__(self) -> str:
        return "KKTReport(max_violation={:.3g}, strict={})".format(self.max_violation, self.strict)


class FitResult():
    """
    A penalized least-squares fit

    The arrays are read-only and the object is not modified after construction.
    """

    def __init__(self, beta_hat: np.ndarray, instance: RegressionInstance, pen: penalties.Penalty,
                 iterations: int, objective_history: typing.Sequence[float] = None, tol: float = DEFAULT_TOL) -> None:
        self.beta_hat = np.asarray(beta_hat, dtype=float)
        self.instance = instance
        self.penalty = pen
        self.iterations = int(iterations)
        self.tol = float(tol)
        self.residual = instance.y - instance.X @ self.beta_hat
        self.objective = _objective(self.residual, self.beta_hat, pen)
        self.objective_history = np.asarray(objective_history if objective_history is not None else [self.objective], dtype=float)
        self.zero_threshold = zero_threshold(self.beta_hat)

        self.active_groups = None
        if isinstance(pen, penalties.GroupLasso):
            norms = np.array([np.linalg.norm(self.beta_hat[group]) for group in pen.groups])
            self.active_groups = np.flatnonzero(norms > self.zero_threshold)
            self.active = np.sort(np.concatenate([pen.groups[k] for k in self.active_groups])) if self.active_groups.size else np.zeros(0, dtype=int)
        elif isinstance(pen, (penalties.Lasso, penalties.ElasticNet)):
            self.active = np.flatnonzero(np.abs(self.beta_hat) > self.zero_threshold)
        else:
            self.active = np.arange(self.beta_hat.shape[0])

        report = kkt_report(self, instance, pen)
        self.kkt_max_violation = report.max_violation
        self.kkt_strict = report.strict_slacks
        self.inactive = report.inactive
        for array in (self.beta_hat, self.residual, self.objective_history, self.active, self.kkt_strict):
            array.setflags(write=False)

    @property
    def active_size(self) -> int:
        """|Ŝ|"""
        return int(self.active.shape[0])

    @property
    def interpolating(self) -> bool:
        """Whether y − Xβ̂ vanishes (to rounding)"""
        return float(np.linalg.norm(self.residual)) <= 1e-12 * max(1.0, float(np.linalg.norm(self.instance.y)))

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {
            "penalty": self.penalty.label,
            "objective": float(self.objective),
            "iterations": self.iterations,
            "active_size": self.active_size,
            "kkt_max_violation": self.kkt_max_violation,
            "kkt_strict": bool(np.all(self.kkt_strict > 0)),
            "residual_norm_sq": float(self.residual @ self.residual)
        }

    def __repr__(self) -> str:
        return "FitResult({}, active_size={}, kkt_max_violation={:.3g})".format(self.penalty.label, self.active_size, self.kkt_max_violation)


def _objective(residual: np.ndarray, beta: np.ndarray, pen: penalties.Penalty) -> float:
    return 0.5 * float(residual @ residual) / residual.shape[0] + pen.value(beta)


def _violation(correlation: np.ndarray, beta: np.ndarray, pen: penalties.Penalty) -> typing.Tuple[float, np.ndarray, np.ndarray]:
    """
    The KKT violation at `beta` given the correlation Xᵀ(y − Xβ)/n

    Returns
    -------
    tuple[float, np.ndarray, np.ndarray]
        The largest violation, the strict slacks and the inactive indices
    """
    threshold = zero_threshold(beta)
    empty = np.zeros(0)
    if isinstance(pen, (penalties.Lasso, penalties.ElasticNet)):
        smooth = correlation - (pen.mu * beta if isinstance(pen, penalties.ElasticNet) else 0.0)
        active = np.abs(beta) > threshold
        stationarity = np.abs(smooth[active] - pen.lam * np.sign(beta[active]))
        slacks = pen.lam - np.abs(smooth[~active])
        violation = max(float(np.max(stationarity, initial=0.0)), float(np.max(-slacks, initial=0.0)))
        return violation, slacks, np.flatnonzero(~active)
    if isinstance(pen, penalties.GroupLasso):
        violation, slacks, inactive = 0.0, [], []
        for index, (group, lam) in enumerate(zip(pen.groups, pen.lambdas)):
            block, norm = beta[group], float(np.linalg.norm(beta[group]))
            if norm > threshold:
                violation = max(violation, float(np.linalg.norm(correlation[group] - lam * block / norm)))
            else:
                excess = float(np.linalg.norm(correlation[group])) - lam
                violation = max(violation, excess)
                slacks.append(-excess)
                inactive.append(index)
        return violation, np.array(slacks), np.array(inactive, dtype=int)
    if isinstance(pen, penalties.Ridge):
        return float(np.max(np.abs(correlation - pen.mu * beta), initial=0.0)), empty, empty.astype(int)
    return float(np.max(np.abs(correlation - pen.gradient(beta)), initial=0.0)), empty, empty.astype(int)


def kkt_report(fit: FitResult, instance: RegressionInstance, pen: penalties.Penalty) -> KKTReport:
    """
    Recomputes the KKT certificate of `fit` from its residual

    The slacks of the group Lasso are reported on the scale nλₖ − ‖X_{Gₖ}ᵀr‖,
    those of the Lasso and the elastic net on the scale λ − |Xⱼᵀr/n|.
    """
    correlation = instance.X.T @ fit.residual / instance.n
    violation, slacks, inactive = _violation(correlation, fit.beta_hat, pen)
    if isinstance(pen, penalties.GroupLasso):
        slacks = instance.n * slacks
    return KKTReport(violation, slacks, inactive)


class _Gram():
    """The Gram matrix XᵀX/n, the correlation Xᵀy/n and ‖y‖²/n of an instance"""

    def __init__(self, instance: RegressionInstance) -> None:
        self.n = instance.n
        self.matrix = instance.X.T @ instance.X / self.n
        self.target = instance.X.T @ instance.y / self.n
        self.response = float(instance.y @ instance.y) / self.n

    def correlation(self, beta: np.ndarray) -> np.ndarray:
        """Xᵀ(y − Xβ)/n"""
        return self.target - self.matrix @ beta

    def objective(self, beta: np.ndarray, correlation: np.ndarray, pen: penalties.Penalty) -> float:
        # ‖y − Xβ‖²/(2n) = (‖y‖²/n − ⟨Xᵀy/n, β⟩ − ⟨β, Xᵀ(y − Xβ)/n⟩)/2
        return 0.5 * (self.response - float(self.target @ beta) - float(beta @ correlation)) + pen.value(beta)


def _not_converged(instance, pen, beta, violation, iterations) -> errors.NotConverged:
    log("{} did not converge after {} iterations (KKT violation {:.3g})".format(pen.label, iterations, violation), level=LogLevels.WARNING)
    return errors.NotConverged(errors.error_message("The solver did not converge",
                                                    reason="KKT violation {:.3g} after {} iterations".format(violation, iterations),
                                                    message="the best iterate is attached to the exception"),
                               beta=beta, violation=violation, iterations=iterations)


def _coordinate_descent(instance: RegressionInstance, pen: typing.Union[penalties.Lasso, penalties.ElasticNet],
                        tol: float, max_iter: int, beta: np.ndarray) -> typing.Tuple[np.ndarray, int, typing.List[float]]:
    """
    Cyclic coordinate descent with covariance updates

    Full sweeps over 1..p alternate with sweeps restricted to the nonzero
    coordinates until the full gradient certifies the KKT conditions.
    """
    gram = _Gram(instance)
    lam = pen.lam
    mu = pen.mu if isinstance(pen, penalties.ElasticNet) else 0.0
    diagonal = np.diag(gram.matrix).copy()
    correlation = gram.correlation(beta)
    history = [gram.objective(beta, correlation, pen)]
    iterations = 0

    def sweep(indices: np.ndarray) -> float:
        nonlocal correlation
        largest = 0.0
        for j in indices:
            denominator = diagonal[j] + mu
            if denominator <= 0:
                new = 0.0
            else:
                rho = correlation[j] + diagonal[j] * beta[j]
                new = np.sign(rho) * max(abs(rho) - lam, 0.0) / denominator
            delta = new - beta[j]
            if delta != 0.0:
                beta[j] = new
                correlation -= gram.matrix[:, j] * delta
                largest = max(largest, abs(delta) * np.sqrt(max(denominator, 0.0)))
        return largest

    everything = np.arange(instance.p)
    while iterations < max_iter:
        sweep(everything)
        iterations += 1
        active = np.flatnonzero(beta)
        while iterations < max_iter and active.size:
            change = sweep(active)
            iterations += 1
            if change <= tol:
                break
        correlation = gram.correlation(beta)
        history.append(gram.objective(beta, correlation, pen))
        violation, _, _ = _violation(correlation, beta, pen)
        if violation <= tol:
            return beta, iterations, history
    raise _not_converged(instance, pen, beta.copy(), _violation(gram.correlation(beta), beta, pen)[0], iterations)


def _block_coordinate_descent(instance: RegressionInstance, pen: penalties.GroupLasso,
                              tol: float, max_iter: int, beta: np.ndarray) -> typing.Tuple[np.ndarray, int, typing.List[float]]:
    """
    Cyclic block coordinate descent

    Each block is minimized by repeated group shrinkage steps on the quadratic
    majorizer with the block Lipschitz constant ‖X_Gᵀ X_G/n‖op.
    """
    gram = _Gram(instance)
    lipschitz = np.array([linalg.operator_norm(gram.matrix[np.ix_(group, group)]) for group in pen.groups])
    correlation = gram.correlation(beta)
    history = [gram.objective(beta, correlation, pen)]
    iterations = 0

    def update(k: int) -> float:
        nonlocal correlation
        group, lam, lipschitz_k = pen.groups[k], pen.lambdas[k], lipschitz[k]
        if lipschitz_k <= 0:
            beta[group] = 0.0
            return 0.0
        moved = 0.0
        for _ in range(50):
            old = beta[group].copy()
            new = penalties.group_shrink(old + correlation[group] / lipschitz_k, lam / lipschitz_k)
            delta = new - old
            step = float(np.max(np.abs(delta), initial=0.0))
            if step == 0.0:
                break
            beta[group] = new
            correlation -= gram.matrix[:, group] @ delta
            moved = max(moved, step)
            if step <= 0.1 * tol:
                break
        return moved

    every_group = range(len(pen.groups))
    while iterations < max_iter:
        for k in every_group:
            update(k)
        iterations += 1
        active = [k for k, group in enumerate(pen.groups) if np.any(beta[group])]
        while iterations < max_iter and active:
            change = max(update(k) for k in active)
            iterations += 1
            if change <= tol:
                break
        correlation = gram.correlation(beta)
        history.append(gram.objective(beta, correlation, pen))
        violation, _, _ = _violation(correlation, beta, pen)
        if violation <= tol:
            return beta, iterations, history
    raise _not_converged(instance, pen, beta.copy(), _violation(gram.correlation(beta), beta, pen)[0], iterations)


def _ridge(instance: RegressionInstance, pen: penalties.Ridge) -> np.ndarray:
    """(XᵀX + nμI)⁻¹Xᵀy, through Xᵀᵀ(XXᵀ + nμI)⁻¹y when p > n"""
    X, y, n = instance.X, instance.y, instance.n
    if instance.p <= n:
        solver = linalg.SPDSolver(X.T @ X + n * pen.mu * np.eye(instance.p), what="ridge system")
        return solver.solve(X.T @ y)
    solver = linalg.SPDSolver(X @ X.T + n * pen.mu * np.eye(n), what="dual ridge system")
    return X.T @ solver.solve(y)


def _newton(instance: RegressionInstance, pen: penalties.Smooth,
            tol: float, max_iter: int, beta: np.ndarray) -> typing.Tuple[np.ndarray, int, typing.List[float]]:
    """Damped Newton's method, halving the step until the objective decreases"""
    gram = _Gram(instance)
    correlation = gram.correlation(beta)
    objective = gram.objective(beta, correlation, pen)
    history = [objective]
    for iteration in range(1, max_iter + 1):
        gradient = pen.gradient(beta) - correlation
        if float(np.max(np.abs(gradient), initial=0.0)) <= tol:
            return beta, iteration - 1, history
        solver = linalg.SPDSolver(gram.matrix + pen.hessian(beta), what="Newton system", error=errors.DegenerateActiveSet)
        direction = -solver.solve(gradient)
        step = 1.0
        for _ in range(60):
            candidate = beta + step * direction
            candidate_correlation = gram.correlation(candidate)
            candidate_objective = gram.objective(candidate, candidate_correlation, pen)
            if candidate_objective <= objective:
                break
            step /= 2
        else:
            # no decrease at the numerical resolution of the objective
            violation = float(np.max(np.abs(gradient)))
            raise _not_converged(instance, pen, beta.copy(), violation, iteration)
        beta, correlation, objective = candidate, candidate_correlation, candidate_objective
        history.append(objective)
    raise _not_converged(instance, pen, beta.copy(), float(np.max(np.abs(pen.gradient(beta) - correlation))), max_iter)


def fit(instance: RegressionInstance, pen: penalties.Penalty, tol: float = DEFAULT_TOL,
        max_iter: int = DEFAULT_MAX_ITER, beta_init: typing.Any = None) -> FitResult:
    """
    Minimizes ‖y − Xb‖²/(2n) + g(b)

    Parameters
    ----------
    instance: RegressionInstance
    pen: Penalty
    tol: float, default=1e-10
        The largest accepted KKT violation (on the scale of Xᵀr/n)
    max_iter: int, default=100000
        The largest number of sweeps (Newton steps for smooth penalties)
    beta_init: array-like, default=None
        A warm start, the zero vector by default

    Raises
    ------
    InputError
        On invalid arguments or inconsistent smooth penalty derivatives
    NotConverged
        When `max_iter` is exhausted, carrying the best iterate
    """
    tol = float(tol)
    if not tol > 0:
        raise errors.InputError(errors.error_message("Invalid tolerance", reason="tol should be positive"))
    if int(max_iter) < 1:
        raise errors.InputError(errors.error_message("Invalid iteration count", reason="max_iter should be at least 1"))
    pen.check_dimension(instance.p)
    beta = np.zeros(instance.p) if beta_init is None else np.array(beta_init, dtype=float)
    if beta.shape != (instance.p,) or not np.all(np.isfinite(beta)):
        raise errors.InputError(errors.error_message("Invalid input", reason="the warm start should be a finite p-vector"))

    if isinstance(pen, (penalties.Lasso, penalties.ElasticNet)):
        beta, iterations, history = _coordinate_descent(instance, pen, tol, int(max_iter), beta)
    elif isinstance(pen, penalties.GroupLasso):
        beta, iterations, history = _block_coordinate_descent(instance, pen, tol, int(max_iter), beta)
    elif isinstance(pen, penalties.Ridge):
        beta, iterations, history = _ridge(instance, pen), 1, None
    elif isinstance(pen, penalties.Smooth):
        pen.check_derivatives(instance.p)
        beta, iterations, history = _newton(instance, pen, tol, int(max_iter), beta)
    else:
        raise errors.InputError(errors.error_message("Unsupported penalty", reason=repr(pen)))

    result = FitResult(beta, instance, pen, iterations, objective_history=history, tol=tol)
    if result.kkt_max_violation > tol and not isinstance(pen, penalties.Ridge):
        # the exact residual disagrees with the Gram updates by more than the tolerance
        raise _not_converged(instance, pen, result.beta_hat, result.kkt_max_violation, iterations)
    log("{} converged in {} iterations (|S| = {}, KKT violation {:.3g})".format(pen.label, iterations, result.active_size, result.kkt_max_violation))
    return result

"""
debias.py

The derivative Ĥ of y ↦ Xβ̂, the degrees of freedom d̂f = tr Ĥ, the direction
correction w₀, the gradient of z₀ ↦ f(z₀) = Xβ̂ − y and the de-biased estimates.

For every supported penalty Ĥ = B K⁻¹ Bᵀ where B holds the active columns of X:

|--------------|------------|-------------------------------|
| Penalty      | B          | K                             |
|--------------|------------|-------------------------------|
| lasso        | X_Ŝ        | X_ŜᵀX_Ŝ                       |
| elastic net  | X_Ŝ        | X_ŜᵀX_Ŝ + nμI                 |
| group lasso  | X_Ŝ        | X_ŜᵀX_Ŝ + M                   |
| ridge        | X          | XᵀX + nμI                     |
| smooth       | X          | XᵀX + n∇²g(β̂)                 |
|--------------|------------|-------------------------------|

and w₀ = B K⁻¹ (a₀)_B.
"""

import typing

import numpy as np

from debiasing import errors
from debiasing import penalty as penalties
from debiasing.fit import FitResult, fit as solve
from debiasing.model import CovarianceSpec, Direction, RegressionInstance, compose_design, decompose_design
from debiasing.utils import linalg
from debiasing.utils.logging import log, warn

MATERIALIZE_LIMIT = 2000
"""Ĥ is only formed as an n×n matrix up to this sample size"""

DEGENERATE_GAP = 1e-8
"""n − d̂f below this gap makes the correction undefined"""


class HatOperator():
    """
    Ĥ = B K⁻¹ Bᵀ kept in factorized form
    """

    def __init__(self, columns: np.ndarray, system: np.ndarray, index: np.ndarray, projector: bool = False) -> None:
        """
        Parameters
        ----------
        columns: np.ndarray
            B, the n×k active columns of X
        system: np.ndarray
            K, the k×k symmetric positive definite system
        index: np.ndarray
            The coordinates of β the k columns correspond to
        projector: bool, default=False
            Whether K = BᵀB (Ĥ is then the orthogonal projector onto span B)

        Raises
        ------
        DegenerateActiveSet
            If K is numerically singular
        """
        self.columns = np.asarray(columns, dtype=float)
        self.index = np.asarray(index, dtype=int)
        self.n = self.columns.shape[0]
        self.projector = bool(projector)
        self.solver = linalg.SPDSolver(system, what="active set system", error=errors.DegenerateActiveSet)
        self._reduced = None

    @property
    def size(self) -> int:
        """k, the number of active columns"""
        return self.columns.shape[1]

    @property
    def reduced(self) -> np.ndarray:
        """K⁻¹BᵀB, whose trace and squared trace give d̂f and ‖Ĥ‖_F²"""
        if self._reduced is None:
            self._reduced = self.solver.solve(self.columns.T @ self.columns) if self.size else np.zeros((0, 0))
        return self._reduced

    def trace(self) -> float:
        """d̂f = tr Ĥ"""
        if self.projector:
            return float(self.size)
        return float(np.trace(self.reduced))

    def frobenius_sq(self) -> float:
        """‖Ĥ‖_F² = tr[(K⁻¹BᵀB)²]"""
        if self.projector:
            return float(self.size)
        reduced = self.reduced
        return float(np.sum(reduced * reduced.T))

    def complement_frobenius_sq(self) -> float:
        """‖I − Ĥ‖_F² = n − 2 d̂f + ‖Ĥ‖_F²"""
        if self.projector:
            return float(self.n - self.size)
        return float(self.n - 2 * self.trace() + self.frobenius_sq())

    def apply(self, vector: np.ndarray) -> np.ndarray:
        """Ĥ v"""
        if not self.size:
            return np.zeros_like(np.asarray(vector, dtype=float))
        return self.columns @ self.solver.solve(self.columns.T @ vector)

    def correction(self, a0: np.ndarray) -> np.ndarray:
        """B K⁻¹ (a₀)_B"""
        if not self.size:
            return np.zeros(self.n)
        return self.columns @ self.solver.solve(np.asarray(a0, dtype=float)[self.index])

    def matrix(self) -> np.ndarray:
        """The n×n matrix Ĥ"""
        if not self.size:
            return np.zeros((self.n, self.n))
        hat = self.columns @ self.solver.solve(self.columns.T)
        return (hat + hat.T) / 2

    def __repr__(self) -> str:
        return "HatOperator(n={}, k={})".format(self.n, self.size)


def group_lasso_M(fit: FitResult, groups: typing.Sequence[np.ndarray], lambdas: typing.Sequence[float]) -> np.ndarray:
    """
    The block diagonal |Ŝ|×|Ŝ| matrix with blocks (nλₖ/‖β̂_{Gₖ}‖)(I − β̂_{Gₖ}β̂_{Gₖ}ᵀ/‖β̂_{Gₖ}‖²)

    The rows follow the sorted active coordinates `fit.active`. An active group
    whose norm is below 10 times the zero threshold raises an
    IllConditionedGroupWarning and the computation proceeds.
    """
    n = fit.instance.n
    position = {int(j): i for i, j in enumerate(fit.active)}
    matrix = np.zeros((fit.active_size, fit.active_size))
    for group, lam in zip(groups, lambdas):
        block = fit.beta_hat[group]
        norm = float(np.linalg.norm(block))
        if norm <= fit.zero_threshold:
            continue
        if norm < 10 * fit.zero_threshold:
            warn("The active group {} has a norm of {:.3g}, close to the zero threshold".format(list(group), norm),
                 category=errors.IllConditionedGroupWarning)
        rows = [position[int(j)] for j in group]
        unit = block / norm
        matrix[np.ix_(rows, rows)] = (n * lam / norm) * (np.eye(len(rows)) - np.outer(unit, unit))
    return matrix


def hat_operator(fit: FitResult, pen: penalties.Penalty, instance: RegressionInstance) -> HatOperator:
    """
    Builds the factorized Ĥ of a fit

    Raises
    ------
    DegenerateActiveSet
        If the active system is numerically singular
    """
    X, n = instance.X, instance.n
    if isinstance(pen, (penalties.Lasso, penalties.ElasticNet, penalties.GroupLasso)):
        columns = X[:, fit.active]
        system = columns.T @ columns
        if isinstance(pen, penalties.ElasticNet):
            system = system + n * pen.mu * np.eye(fit.active_size)
        elif isinstance(pen, penalties.GroupLasso):
            system = system + group_lasso_M(fit, pen.groups, pen.lambdas)
        return HatOperator(columns, system, fit.active, projector=isinstance(pen, penalties.Lasso))
    everything = np.arange(instance.p)
    if isinstance(pen, penalties.Ridge):
        return HatOperator(X, X.T @ X + n * pen.mu * np.eye(instance.p), everything)
    if isinstance(pen, penalties.Smooth):
        return HatOperator(X, X.T @ X + n * pen.hessian(fit.beta_hat), everything)
    raise errors.InputError(errors.error_message("No closed form for this penalty", reason=repr(pen)))


def hat_H(fit: FitResult, pen: penalties.Penalty, instance: RegressionInstance) -> np.ndarray:
    """The n×n matrix Ĥ, symmetric with eigenvalues in [0, 1]"""
    return hat_operator(fit, pen, instance).matrix()


def df(fit: FitResult, pen: penalties.Penalty, instance: RegressionInstance) -> float:
    """
    d̂f = tr Ĥ

    |Ŝ| for the Lasso and Σᵢ sᵢ²/(sᵢ² + nμ) over the singular values of X for
    ridge; a trace of the factorized solve otherwise.
    """
    if isinstance(pen, penalties.Lasso):
        return float(fit.active_size)
    if isinstance(pen, penalties.Ridge):
        singular_sq = np.square(np.linalg.svd(instance.X, compute_uv=False))
        return float(np.sum(singular_sq / (singular_sq + instance.n * pen.mu)))
    return hat_operator(fit, pen, instance).trace()


def _norm_bound(pen: penalties.Penalty, instance: RegressionInstance, cov: CovarianceSpec) -> typing.Optional[float]:
    """The bound on ‖w₀‖² for a normalized a₀, None when it does not apply"""
    bounds = []
    if pen.strong_convexity > 0:
        bounds.append(cov.operator_norm() / (4 * pen.strong_convexity))
    if instance.n > instance.p:
        whitened = cov.solve(instance.X.T @ instance.X / instance.n)
        smallest = float(np.min(np.real(np.linalg.eigvals(whitened))))
        if smallest > 0:
            bounds.append(1.0 / smallest)
    if not bounds:
        return None
    return min(bounds) / instance.n


def _check_norm(correction: np.ndarray, bound: typing.Optional[float]) -> None:
    norm_sq = float(correction @ correction)
    if bound is not None and norm_sq > bound * (1 + 1e-8):
        warn("‖w0‖² = {:.6g} exceeds its bound {:.6g}".format(norm_sq, bound), category=errors.NormBoundWarning)


def w0(fit: FitResult, pen: penalties.Penalty, direction: Direction, instance: RegressionInstance,
       cov: CovarianceSpec = None, operator: HatOperator = None, check_norm: bool = True) -> np.ndarray:
    """
    The correction vector w₀ = B K⁻¹ (a₀)_B

    Linear in a₀. Interpolating fits (y − Xβ̂ = 0) get w₀ = 0 and an
    InterpolationWarning. When Σ is known and μ > 0 or n > p, the bound on
    ‖w₀‖² is checked and a violation raises a NormBoundWarning.
    """
    if fit.interpolating:
        warn("The fit interpolates the data, w0 is set to 0", category=errors.InterpolationWarning)
        return np.zeros(instance.n)
    operator = operator if operator is not None else hat_operator(fit, pen, instance)
    result = operator.correction(direction.a0)
    cov = cov if cov is not None else instance.cov
    if check_norm and cov is not None:
        _check_norm(result, _norm_bound(pen, instance, cov))
    return result


def _direction_error(fit: FitResult, direction: Direction, instance: RegressionInstance, theta: typing.Optional[float]) -> float:
    """⟨a₀, h⟩ = ⟨a₀, β̂⟩ − θ"""
    if theta is None:
        if instance.truth is None:
            raise errors.InputError(errors.error_message("Invalid input", reason="theta required",
                                                         message="pass theta or attach the truth to the instance"))
        theta = direction.theta(instance.truth.beta)
    return direction.theta(fit.beta_hat) - float(theta)


class GradientSummary():
    """
    The Jacobian J = ∂f/∂z₀ of f(z₀) = Xβ̂ − y, J = ⟨a₀,h⟩(I − Ĥ) + w₀(y − Xβ̂)ᵀ
    """

    def __init__(self, direction_error: float, w0: np.ndarray, residual: np.ndarray,
                 complement_frobenius_sq: float, cross: float, matrix: np.ndarray = None) -> None:
        self.direction_error = float(direction_error)
        """⟨a₀, h⟩"""
        self.matrix = matrix
        """J, when materialized"""
        self.w0_dot_residual = float(w0 @ residual)
        t = self.direction_error
        self.trace_sq = t * t * complement_frobenius_sq + 2 * t * cross + self.w0_dot_residual ** 2
        """tr[J²]"""
        self.frobenius_sq = t * t * complement_frobenius_sq + 2 * t * cross + float(w0 @ w0) * float(residual @ residual)
        """‖J‖_F²"""

    def __repr__(self) -> str:
        return "GradientSummary(trace_sq={:.6g}, frobenius_sq={:.6g})".format(self.trace_sq, self.frobenius_sq)


def grad_f_z0(fit: FitResult, pen: penalties.Penalty, direction: Direction, instance: RegressionInstance,
              theta: float = None, materialize: bool = None, cov: CovarianceSpec = None) -> GradientSummary:
    """
    ∇f(z₀)ᵀ = ⟨a₀,h⟩(I − Ĥ) + w₀(y − Xβ̂)ᵀ with ‖∇f‖_F² and tr[(∇f)²]

    ⟨a₀,h⟩ = ⟨a₀,β̂⟩ − θ uses the supplied θ, or ⟨a₀,β⟩ from the truth. The
    matrix itself is formed when `materialize` is set, by default up to
    n = MATERIALIZE_LIMIT.

    Raises
    ------
    InputError
        "theta required" when neither θ nor the truth is available
    """
    t = _direction_error(fit, direction, instance, theta)
    operator = hat_operator(fit, pen, instance)
    correction = w0(fit, pen, direction, instance, cov=cov, operator=operator)
    residual = fit.residual
    # rᵀ(I − Ĥ)w₀
    cross = float(residual @ (correction - operator.apply(correction)))
    matrix = None
    if materialize or (materialize is None and instance.n <= MATERIALIZE_LIMIT):
        matrix = t * (np.eye(instance.n) - operator.matrix()) + np.outer(correction, residual)
    return GradientSummary(t, correction, residual, operator.complement_frobenius_sq(), cross, matrix=matrix)


def _correction_gap(instance: RegressionInstance, degrees: float) -> float:
    gap = instance.n - degrees
    if gap < DEGENERATE_GAP:
        raise errors.DegenerateCorrection(errors.error_message("Degenerate correction", reason="n − df = {:.3g}".format(gap)))
    return gap


def debias_vector(fit: FitResult, instance: RegressionInstance, cov: CovarianceSpec, degrees: float = None) -> np.ndarray:
    """
    β̂ + (n − d̂f)⁻¹ Σ⁻¹Xᵀ(y − Xβ̂)

    Raises
    ------
    DegenerateCorrection
        If d̂f ≥ n − 1e-8
    """
    degrees = df(fit, fit.penalty, instance) if degrees is None else float(degrees)
    gap = _correction_gap(instance, degrees)
    return fit.beta_hat + cov.solve(instance.X.T @ fit.residual) / gap


def theta_hat(fit: FitResult, direction: Direction, pen: penalties.Penalty, instance: RegressionInstance,
              degrees: float = None, correction: np.ndarray = None) -> float:
    """θ̂ = ⟨a₀,β̂⟩ + (n − d̂f)⁻¹⟨z₀ + w₀, y − Xβ̂⟩"""
    degrees = df(fit, pen, instance) if degrees is None else float(degrees)
    gap = _correction_gap(instance, degrees)
    correction = w0(fit, pen, direction, instance) if correction is None else correction
    return direction.theta(fit.beta_hat) + float((direction.z0 + correction) @ fit.residual) / gap


def xi0(fit: FitResult, pen: penalties.Penalty, direction: Direction, instance: RegressionInstance, theta: float = None) -> float:
    """
    ξ₀ = z₀ᵀf(z₀) − div f(z₀) with f(z₀) = Xβ̂ − y

    Equals −(n − d̂f)(θ̂ − θ).
    """
    t = _direction_error(fit, direction, instance, theta)
    operator = hat_operator(fit, pen, instance)
    correction = w0(fit, pen, direction, instance, operator=operator)
    divergence = t * (instance.n - operator.trace()) + float(correction @ fit.residual)
    return float(-direction.z0 @ fit.residual) - divergence


def _central_difference(evaluate: typing.Callable[[float], FitResult], reference: FitResult, step: float,
                        what: str, retries: int = 3) -> typing.Tuple[FitResult, FitResult, float]:
    """
    Fits at ±step, dividing the step by 10 while the active set moves

    Raises
    ------
    NonsmoothPoint
        If the active set still changes after `retries` divisions
    """
    for _ in range(retries + 1):
        plus, minus = evaluate(step), evaluate(-step)
        if np.array_equal(plus.active, reference.active) and np.array_equal(minus.active, reference.active):
            return plus, minus, step
        log("The active set changed along {} with step {:g}, retrying".format(what, step))
        step /= 10
    raise errors.NonsmoothPoint(errors.error_message("Nonsmooth point", reason="the active set changes along {}".format(what)))


def _default_step(instance: RegressionInstance) -> float:
    return 1e-6 * (1 + float(np.max(np.abs(instance.y))))


def finite_diff_H(instance: RegressionInstance, pen: penalties.Penalty, step: float = None, tol: float = 1e-12) -> np.ndarray:
    """
    Central differences of y ↦ Xβ̂(y), column by column

    Parameters
    ----------
    step: float, default=1e-6·(1 + ‖y‖∞)
    tol: float, default=1e-12
        The solver tolerance at every perturbed point
    """
    step = _default_step(instance) if step is None else float(step)
    reference = solve(instance, pen, tol=tol)
    columns = []
    for i in range(instance.n):
        basis = np.zeros(instance.n)
        basis[i] = 1.0

        def evaluate(shift: float) -> FitResult:
            return solve(instance.with_response(instance.y + shift * basis), pen, tol=tol, beta_init=reference.beta_hat)

        plus, minus, used = _central_difference(evaluate, reference, step, "y{}".format(i + 1))
        columns.append(instance.X @ (plus.beta_hat - minus.beta_hat) / (2 * used))
    return np.column_stack(columns)


def finite_diff_grad_f_z0(instance: RegressionInstance, pen: penalties.Penalty, direction: Direction,
                          step: float = None, tol: float = 1e-12) -> np.ndarray:
    """
    Central differences of z₀ ↦ f(z₀) = X(z₀)β̂ − y(z₀) holding ε and XQ₀ fixed

    X(z₀) = XQ₀ + z₀a₀ᵀ and y(z₀) = X(z₀)β + ε. Column j of the result is ∂f/∂z₀ⱼ.
    """
    if instance.truth is None:
        raise errors.InputError(errors.error_message("Invalid input", reason="the truth is needed to hold ε fixed"))
    step = _default_step(instance) if step is None else float(step)
    beta, noise = instance.truth.beta, instance.noise
    z0, XQ0 = decompose_design(instance.X, direction)
    reference = solve(instance, pen, tol=tol)

    def moved(z: np.ndarray) -> RegressionInstance:
        X = compose_design(XQ0, z, direction)
        return instance.with_design(X, X @ beta + noise)

    columns = []
    for j in range(instance.n):
        basis = np.zeros(instance.n)
        basis[j] = 1.0
        images = {}

        def evaluate(shift: float) -> FitResult:
            perturbed = moved(z0 + shift * basis)
            result = solve(perturbed, pen, tol=tol, beta_init=reference.beta_hat)
            images[shift] = perturbed.X @ result.beta_hat - perturbed.y
            return result

        _, _, used = _central_difference(evaluate, reference, step, "z0[{}]".format(j + 1))
        columns.append((images[used] - images[-used]) / (2 * used))
    return np.column_stack(columns)


class DirectionSummary():
    """The de-biased quantities attached to one direction"""

    def __init__(self, theta_hat: float, w0: np.ndarray, w0_dot_residual: float, z0_dot_residual: float, a0_dot_beta_hat: float) -> None:
        self.theta_hat = float(theta_hat)
        self.w0 = w0
        self.w0_dot_residual = float(w0_dot_residual)
        self.z0_dot_residual = float(z0_dot_residual)
        self.a0_dot_beta_hat = float(a0_dot_beta_hat)

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {
            "theta_hat": self.theta_hat,
            "a0_dot_beta_hat": self.a0_dot_beta_hat,
            "z0_dot_residual": self.z0_dot_residual,
            "w0_dot_residual": self.w0_dot_residual,
            "w0_norm_sq": float(self.w0 @ self.w0)
        }


class DebiasReport():
    """
    Summary of Ĥ with the de-biased estimates for a list of directions
    """

    def __init__(self, df: float, frob_IminusH_sq: float, frob_H_sq: float, beta_debias: typing.Optional[np.ndarray],
                 directions: typing.List[DirectionSummary], n: int) -> None:
        self.df = float(df)
        self.frob_IminusH_sq = float(frob_IminusH_sq)
        self.frob_H_sq = float(frob_H_sq)
        self.beta_debias = beta_debias
        self.directions = directions
        self.n = int(n)

    @property
    def w0(self) -> np.ndarray:
        """w₀ of the first direction"""
        return self.directions[0].w0

    @property
    def theta_hat(self) -> float:
        """θ̂ of the first direction"""
        return self.directions[0].theta_hat

    @property
    def w0_dot_residual(self) -> float:
        return self.directions[0].w0_dot_residual

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {
            "n": self.n,
            "df": self.df,
            "frob_IminusH_sq": self.frob_IminusH_sq,
            "frob_H_sq": self.frob_H_sq,
            "directions": [summary.to_dict() for summary in self.directions]
        }

    def __repr__(self) -> str:
        return "DebiasReport(df={:.6g}, frob_IminusH_sq={:.6g}, directions={})".format(self.df, self.frob_IminusH_sq, len(self.directions))


def debias_report(fit: FitResult, pen: penalties.Penalty, instance: RegressionInstance, cov: CovarianceSpec,
                  directions: typing.Sequence[Direction]) -> DebiasReport:
    """
    Assembles d̂f, ‖I − Ĥ‖_F², β̂^(de-bias) and θ̂ for every direction

    Ĥ is never materialized here.
    """
    operator = hat_operator(fit, pen, instance)
    degrees = df(fit, pen, instance)
    bound = _norm_bound(pen, instance, cov)
    summaries = []
    for direction in directions:
        correction = w0(fit, pen, direction, instance, operator=operator, check_norm=False)
        _check_norm(correction, bound)
        summaries.append(DirectionSummary(theta_hat(fit, direction, pen, instance, degrees=degrees, correction=correction),
                                          correction, correction @ fit.residual, direction.z0 @ fit.residual,
                                          direction.theta(fit.beta_hat)))
    beta_debias = debias_vector(fit, instance, cov, degrees=degrees)
    return DebiasReport(degrees, operator.complement_frobenius_sq(), operator.frobenius_sq(), beta_debias, summaries, instance.n)


__all__ = ["HatOperator", "hat_operator", "hat_H", "group_lasso_M", "df", "w0", "grad_f_z0", "GradientSummary",
           "debias_vector", "theta_hat", "xi0", "finite_diff_H", "finite_diff_grad_f_z0", "DebiasReport",
           "DirectionSummary", "debias_report", "MATERIALIZE_LIMIT"]

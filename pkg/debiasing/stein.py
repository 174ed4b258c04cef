"""
stein.py

Random variables ξ = zᵀf(z) − div f(z) for z ~ N(0, Iₙ) and the Monte Carlo
checks of their first and second moments.

Jacobians follow J[i, j] = ∂fᵢ/∂zⱼ; every reported scalar (divergence, tr J²,
‖J‖_F²) is invariant under transposition.
"""

import typing

import numpy as np

from debiasing import errors
from debiasing import debias
from debiasing import penalty as penalties
from debiasing.fit import fit as solve
from debiasing.model import CovarianceSpec, Direction, RegressionInstance, compose_design, decompose_design, normalize_direction, sample_instance
from debiasing.utils import linalg, rng
from debiasing.utils.logging import log

DivergenceMode = typing.Literal["analytic", "finite_difference"]

FULL_MATRIX_LIMIT = 500
"""Ā is stored as a matrix up to this dimension, probed beyond"""

PROBES = 64
"""Rademacher probes used when Ā is not stored"""


class SteinTerms():
    """f(z) with the Jacobian scalars needed by ξ and the variance estimators"""

    def __init__(self, value: np.ndarray, divergence: float, trace_sq: float, frobenius_sq: float, jacobian: np.ndarray = None) -> None:
        self.value = value
        self.divergence = float(divergence)
        self.trace_sq = float(trace_sq)
        """tr[J²]"""
        self.frobenius_sq = float(frobenius_sq)
        """‖J‖_F²"""
        self.jacobian = jacobian


class SteinFunction():
    """
    A map f: ℝⁿ → ℝⁿ, weakly differentiable, with an optional analytic Jacobian
    """

    def __init__(self, n: int, evaluate: typing.Callable[[np.ndarray], np.ndarray],
                 jacobian: typing.Callable[[np.ndarray], np.ndarray] = None,
                 mode: DivergenceMode = None, step: float = 1e-5, name: str = "custom") -> None:
        """
        Parameters
        ----------
        n: int
            The dimension
        evaluate: callable
            z ↦ f(z)
        jacobian: callable, default=None
            z ↦ J(z), the n×n matrix of ∂fᵢ/∂zⱼ
        mode: "analytic" | "finite_difference", default="analytic" when a Jacobian is given
        step: float, default=1e-5
            The relative central difference step, 1e-5·(1 + |zᵢ|) for coordinate i
        name: str
        """
        self.n = int(n)
        self.evaluate = evaluate
        self.jacobian_fn = jacobian
        self.mode = mode or ("analytic" if jacobian is not None else "finite_difference")
        if self.mode == "analytic" and jacobian is None:
            raise errors.InputError(errors.error_message("Invalid Stein function", reason="the analytic mode needs a Jacobian"))
        if self.mode not in ("analytic", "finite_difference"):
            raise errors.InputError(errors.error_message("Invalid Stein function", reason="unknown divergence mode {}".format(self.mode)))
        self.step = float(step)
        self.name = str(name)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        value = np.asarray(self.evaluate(z), dtype=float)
        if value.shape != (self.n,):
            raise errors.InputError(errors.error_message("Invalid Stein function", reason="f(z) has shape {}".format(value.shape)))
        return value

    def _steps(self, z: np.ndarray) -> np.ndarray:
        return self.step * (1 + np.abs(z))

    def finite_difference_divergence(self, z: np.ndarray) -> float:
        """Σᵢ (fᵢ(z + hᵢeᵢ) − fᵢ(z − hᵢeᵢ))/(2hᵢ)"""
        total = 0.0
        for i, h in enumerate(self._steps(z)):
            shifted = z.copy()
            shifted[i] = z[i] + h
            upper = self(shifted)[i]
            shifted[i] = z[i] - h
            total += (upper - self(shifted)[i]) / (2 * h)
        return float(total)

    def finite_difference_jacobian(self, z: np.ndarray) -> np.ndarray:
        columns = []
        for i, h in enumerate(self._steps(z)):
            shifted = z.copy()
            shifted[i] = z[i] + h
            upper = self(shifted)
            shifted[i] = z[i] - h
            columns.append((upper - self(shifted)) / (2 * h))
        return np.column_stack(columns)

    def jacobian(self, z: np.ndarray) -> np.ndarray:
        if self.mode == "analytic":
            return np.asarray(self.jacobian_fn(z), dtype=float)
        return self.finite_difference_jacobian(z)

    def divergence(self, z: np.ndarray) -> float:
        if self.mode == "analytic":
            return float(np.trace(self.jacobian(z)))
        return self.finite_difference_divergence(z)

    def terms(self, z: np.ndarray) -> SteinTerms:
        """f(z), div f(z), tr[J²] and ‖J‖_F²"""
        z = np.asarray(z, dtype=float)
        jacobian = self.jacobian(z)
        return SteinTerms(self(z), float(np.trace(jacobian)), float(np.sum(jacobian * jacobian.T)), float(np.sum(jacobian * jacobian)), jacobian)

    def check_consistency(self, probes: int = 3, seed: rng.SeedType = 0, rtol: float = 1e-4) -> None:
        """
        Compares the analytic and finite-difference divergences at random points

        Raises
        ------
        InputError
            If they disagree beyond `rtol`
        """
        if self.jacobian_fn is None:
            return
        generator = rng.generator(seed)
        for _ in range(int(probes)):
            z = generator.standard_normal(self.n)
            analytic = float(np.trace(np.asarray(self.jacobian_fn(z), dtype=float)))
            numeric = self.finite_difference_divergence(z)
            if abs(analytic - numeric) > rtol * max(1.0, abs(analytic)):
                raise errors.InputError(errors.error_message("Inconsistent Stein function",
                                                             reason="divergences {:.8g} and {:.8g} disagree".format(analytic, numeric)))

    def __repr__(self) -> str:
        return "SteinFunction({}, n={}, mode={})".format(self.name, self.n, self.mode)


def _check_point(sf: SteinFunction, z: typing.Any) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape != (sf.n,) or not np.all(np.isfinite(z)):
        raise errors.InputError(errors.error_message("Invalid input", reason="z should be a finite {}-vector".format(sf.n)))
    return z


def _xi(z: np.ndarray, terms: SteinTerms) -> float:
    if not np.isfinite(terms.divergence):
        raise errors.NonsmoothPoint(errors.error_message("Nonsmooth evaluation", reason="the divergence is not finite"))
    return float(z @ terms.value) - terms.divergence


def xi(sf: SteinFunction, z: typing.Any) -> float:
    """
    ξ = zᵀf(z) − div f(z)

    Raises
    ------
    NonsmoothPoint
        If the divergence is NaN
    """
    z = _check_point(sf, z)
    if sf.mode == "finite_difference" and not isinstance(sf, RegressionSteinFunction):
        return _xi(z, SteinTerms(sf(z), sf.finite_difference_divergence(z), float("nan"), float("nan")))
    return _xi(z, sf.terms(z))


def variance_estimator(sf: SteinFunction, z: typing.Any) -> float:
    """‖f(z)‖² + tr[(∇f(z))²], an unbiased estimate of Var[ξ]"""
    terms = sf.terms(_check_point(sf, z))
    return float(terms.value @ terms.value) + terms.trace_sq


def consistent_variance_estimator(sf: SteinFunction, z: typing.Any) -> float:
    """‖f(z)‖², whose ratio to Var[ξ] tends to 1 when E‖∇f‖_F² = o(E‖f‖²)"""
    value = sf(_check_point(sf, z))
    return float(value @ value)


class _Samples():
    """Per-replication draws of ξ and of the Jacobian scalars"""

    def __init__(self, sf: SteinFunction, reps: int, seed: rng.SeedType, keep_mean: bool = False) -> None:
        generator = rng.generator(seed)
        points = generator.standard_normal((int(reps), sf.n))
        self.xi = np.empty(int(reps))
        self.f_sq = np.empty(int(reps))
        self.trace_sq = np.empty(int(reps))
        self.frobenius_sq = np.empty(int(reps))
        self.mean_f = np.zeros(sf.n)
        self.full = keep_mean and sf.n <= FULL_MATRIX_LIMIT
        self.mean_jacobian = np.zeros((sf.n, sf.n)) if self.full else None
        self.probes = None if self.full or not keep_mean else linalg.rademacher_probes(sf.n, PROBES, generator)
        self.mean_jv = None if self.probes is None else np.zeros((sf.n, PROBES))
        self.mean_jtv = None if self.probes is None else np.zeros((sf.n, PROBES))
        for index, z in enumerate(points):
            terms = sf.terms(z)
            self.xi[index] = _xi(z, terms)
            self.f_sq[index] = terms.value @ terms.value
            self.trace_sq[index] = terms.trace_sq
            self.frobenius_sq[index] = terms.frobenius_sq
            if keep_mean:
                self.mean_f += terms.value
                jacobian = terms.jacobian if terms.jacobian is not None else sf.jacobian(z)
                if self.full:
                    self.mean_jacobian += jacobian
                else:
                    self.mean_jv += jacobian @ self.probes
                    self.mean_jtv += jacobian.T @ self.probes
        reps = int(reps)
        self.mean_f /= reps
        if self.mean_jacobian is not None:
            self.mean_jacobian /= reps
        if self.mean_jv is not None:
            self.mean_jv /= reps
            self.mean_jtv /= reps


def _mean_se(values: np.ndarray) -> typing.Tuple[float, float]:
    return float(np.mean(values)), float(np.std(values, ddof=1) / np.sqrt(values.shape[0]))


class SecondOrderCheck():
    """E[ξ²] against E‖f‖² + E tr[(∇f)²]"""

    def __init__(self, lhs: float, lhs_se: float, rhs: float, rhs_se: float, z_score: float, mean_xi: float, mean_xi_se: float, reps: int) -> None:
        self.lhs, self.lhs_se = lhs, lhs_se
        self.rhs, self.rhs_se = rhs, rhs_se
        self.z_score = z_score
        """The mean paired difference over its standard error"""
        self.mean_xi, self.mean_xi_se = mean_xi, mean_xi_se
        self.reps = reps

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {
            "reps": self.reps,
            "lhs": self.lhs, "lhs_se": self.lhs_se,
            "rhs": self.rhs, "rhs_se": self.rhs_se,
            "z_score": self.z_score,
            "mean_xi": self.mean_xi, "mean_xi_se": self.mean_xi_se
        }

    def __repr__(self) -> str:
        return "SecondOrderCheck(lhs={:.6g}±{:.2g}, rhs={:.6g}±{:.2g}, z={:.3g})".format(self.lhs, self.lhs_se, self.rhs, self.rhs_se, self.z_score)


def second_order_stein_check(sf: SteinFunction, reps: int = 100000, seed: rng.SeedType = 0) -> SecondOrderCheck:
    """
    Monte Carlo check of E[ξ²] = E‖f‖² + E tr[(∇f)²]

    Raises
    ------
    InputError
        If reps < 100
    """
    if int(reps) < 100:
        raise errors.InputError(errors.error_message("Too few replications", reason="reps should be at least 100"))
    samples = _Samples(sf, reps, seed)
    lhs, lhs_se = _mean_se(samples.xi ** 2)
    rhs, rhs_se = _mean_se(samples.f_sq + samples.trace_sq)
    difference = samples.xi ** 2 - samples.f_sq - samples.trace_sq
    mean, se = _mean_se(difference)
    z_score = mean / se if se > 0 else (0.0 if mean == 0 else float("inf"))
    mean_xi, mean_xi_se = _mean_se(samples.xi)
    log("{}: E[ξ²] = {:.6g}, E‖f‖² + E tr J² = {:.6g} (z = {:.3g})".format(sf.name, lhs, rhs, z_score))
    return SecondOrderCheck(lhs, lhs_se, rhs, rhs_se, z_score, mean_xi, mean_xi_se, int(reps))


class SteinReport():
    """
    Monte Carlo summary of ξ and of its linear and quadratic approximations

    eps1_sq:      1 − ‖μ̄‖²/Var ξ
    eps1_bar_sq:  2E‖Jˢ‖_F²/(‖μ̄‖² + 2E‖Jˢ‖_F²), an upper bound of eps1_sq
    eps1_bbar_sq: 2E‖J‖_F²/(‖μ̄‖² + 2E‖J‖_F²)
    eps12_sq:     1 − (‖μ̄‖² + 2‖Āˢ‖_F²)/Var ξ, the distance to the quadratic projection
    discriminant: ‖Āˢ‖_op²/(‖μ̄‖² + ‖Āˢ‖_F²), small when the quadratic part is itself normal
    """

    def __init__(self, reps: int, mc_mean_xi: float, mc_var_xi: float, mean_fsq: float, mean_tr_grad_sq: float,
                 mean_frob_grad_sq: float, mu_bar: np.ndarray, A_bar: typing.Optional[np.ndarray], symmetric_frob_sq: float,
                 symmetric_op: float, mean_variance_estimate: float, ks_studentized: typing.Optional[float]) -> None:
        self.reps = int(reps)
        self.mc_mean_xi = float(mc_mean_xi)
        self.mc_var_xi = float(mc_var_xi)
        self.mean_fsq = float(mean_fsq)
        self.mean_tr_grad_sq = float(mean_tr_grad_sq)
        self.mean_frob_grad_sq = float(mean_frob_grad_sq)
        self.mu_bar = mu_bar
        self.A_bar = A_bar
        self.mean_variance_estimate = float(mean_variance_estimate)
        self.ks_studentized = ks_studentized
        """KS distance of ξ/√(‖f‖² + tr J²) to N(0, 1)"""

        mu_sq = float(mu_bar @ mu_bar)
        symmetric_sq = (self.mean_frob_grad_sq + self.mean_tr_grad_sq) / 2
        self.eps1_sq = 1 - mu_sq / self.mc_var_xi
        self.eps1_bar_sq = _ratio(2 * symmetric_sq, mu_sq + 2 * symmetric_sq)
        self.eps1_bbar_sq = _ratio(2 * self.mean_frob_grad_sq, mu_sq + 2 * self.mean_frob_grad_sq)
        self.eps12_sq = 1 - (mu_sq + 2 * symmetric_frob_sq) / self.mc_var_xi
        self.discriminant = _ratio(symmetric_op ** 2, mu_sq + symmetric_frob_sq)

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {
            "reps": self.reps,
            "mc_mean_xi": self.mc_mean_xi,
            "mc_var_xi": self.mc_var_xi,
            "mean_fsq": self.mean_fsq,
            "mean_tr_grad_sq": self.mean_tr_grad_sq,
            "mean_frob_grad_sq": self.mean_frob_grad_sq,
            "mean_variance_estimate": self.mean_variance_estimate,
            "mu_bar_norm_sq": float(self.mu_bar @ self.mu_bar),
            "eps1_sq": self.eps1_sq,
            "eps1_bar_sq": self.eps1_bar_sq,
            "eps1_bbar_sq": self.eps1_bbar_sq,
            "eps12_sq": self.eps12_sq,
            "discriminant": self.discriminant,
            "ks_studentized": self.ks_studentized
        }

    def __repr__(self) -> str:
        return "SteinReport(eps1_sq={:.4g}, eps1_bar_sq={:.4g}, eps12_sq={:.4g})".format(self.eps1_sq, self.eps1_bar_sq, self.eps12_sq)


def _ratio(numerator: float, denominator: float) -> float:
    if denominator <= 0:
        return 0.0 if numerator <= 0 else float("inf")
    return numerator / denominator


def approximation_report(sf: SteinFunction, reps: int = 10000, seed: rng.SeedType = 0) -> SteinReport:
    """
    Estimates μ̄ = E f(z), Ā = E J(z) and the approximation errors of ξ

    Beyond n = 500, Ā is represented by its action on 64 Rademacher probes V:
    ‖Āˢ‖_F² ≈ ‖ĀˢV‖_F²/64 and ‖Āˢ‖_op by the largest Ritz value on span V.

    Raises
    ------
    InputError
        If reps < 1000
    Degenerate
        If the sample variance of ξ is not positive
    """
    if int(reps) < 1000:
        raise errors.InputError(errors.error_message("Too few replications", reason="reps should be at least 1000"))
    from debiasing.sim import ks_normal

    samples = _Samples(sf, reps, seed, keep_mean=True)
    variance = float(np.var(samples.xi, ddof=1))
    if not variance > 0:
        raise errors.Degenerate(errors.error_message("Degenerate Stein variable", reason="the variance of ξ is {:.3g}".format(variance)))
    if samples.full:
        symmetric = (samples.mean_jacobian + samples.mean_jacobian.T) / 2
        symmetric_frob_sq = float(np.sum(symmetric * symmetric))
        symmetric_op = linalg.operator_norm(symmetric)
    else:
        block = (samples.mean_jv + samples.mean_jtv) / 2
        symmetric_frob_sq = linalg.hutchinson_frobenius_sq(block)
        basis, triangle = np.linalg.qr(samples.probes)
        ritz = basis.T @ block @ np.linalg.inv(triangle)
        symmetric_op = float(np.max(np.abs(np.linalg.eigvalsh((ritz + ritz.T) / 2))))

    estimates = samples.f_sq + samples.trace_sq
    positive = estimates > 0
    ks = None
    if np.count_nonzero(positive) >= 20:
        ks = ks_normal(samples.xi[positive] / np.sqrt(estimates[positive]))
    report = SteinReport(reps, float(np.mean(samples.xi)), variance, float(np.mean(samples.f_sq)), float(np.mean(samples.trace_sq)),
                         float(np.mean(samples.frobenius_sq)), samples.mean_f, samples.mean_jacobian, symmetric_frob_sq,
                         symmetric_op, float(np.mean(estimates)), ks)
    log("{}: {}".format(sf.name, report))
    return report


class RegressionSteinFunction(SteinFunction):
    """
    f(z₀) = Xβ̂ − y for the design X = XQ₀ + z₀a₀ᵀ, y = Xβ + ε, holding (XQ₀, ε) fixed

    z₀ = Xu₀ has iid N(0, ⟨a₀, Σ⁻¹a₀⟩⁻¹) = N(0, 1) entries under the
    normalization of a₀, so a standard normal z plays the role of z₀.
    The Jacobian comes from the closed form of `debias.grad_f_z0`.
    """

    def __init__(self, instance: RegressionInstance, pen: penalties.Penalty, direction: Direction, tol: float = 1e-10) -> None:
        if instance.truth is None:
            raise errors.InputError(errors.error_message("Invalid input", reason="the regression Stein function needs the truth"))
        self.instance = instance
        self.pen = pen
        self.direction = direction
        self.tol = float(tol)
        self.noise = instance.noise
        _, self.XQ0 = decompose_design(instance.X, direction)
        super().__init__(instance.n, self._evaluate, jacobian=self._jacobian, mode="analytic", name="regression")

    def _instance(self, z: np.ndarray) -> RegressionInstance:
        X = compose_design(self.XQ0, z, self.direction)
        return self.instance.with_design(X, X @ self.instance.truth.beta + self.noise)

    def _fit(self, z: np.ndarray):
        instance = self._instance(np.asarray(z, dtype=float))
        return instance, solve(instance, self.pen, tol=self.tol)

    def _evaluate(self, z: np.ndarray) -> np.ndarray:
        _, result = self._fit(z)
        return -result.residual

    def _jacobian(self, z: np.ndarray) -> np.ndarray:
        instance, result = self._fit(z)
        return debias.grad_f_z0(result, self.pen, self.direction.rebind(instance.X), instance, materialize=True).matrix

    def terms(self, z: np.ndarray) -> SteinTerms:
        instance, result = self._fit(np.asarray(z, dtype=float))
        direction = self.direction.rebind(instance.X)
        gradient = debias.grad_f_z0(result, self.pen, direction, instance, materialize=False)
        operator = debias.hat_operator(result, self.pen, instance)
        divergence = gradient.direction_error * (instance.n - operator.trace()) + gradient.w0_dot_residual
        return SteinTerms(-result.residual, divergence, gradient.trace_sq, gradient.frobenius_sq)


def regression_function(n: int = 100, p: int = 50, s: int = 10, lam: float = None, seed: rng.SeedType = 0) -> RegressionSteinFunction:
    """
    The regression adapter on a sparse Lasso problem with Σ = I and a₀ = e₁

    λ defaults to √(2 log(p/s)/n).
    """
    generator = rng.generator(seed)
    beta = np.zeros(int(p))
    beta[:int(s)] = 1.0
    cov = CovarianceSpec.identity(p)
    instance = sample_instance(cov, beta, 1.0, n, generator)
    lam = np.sqrt(2 * np.log(p / s) / n) if lam is None else lam
    direction = normalize_direction(np.eye(int(p))[0], cov, instance.X)
    return RegressionSteinFunction(instance, penalties.Lasso(lam), direction)


def _linear(n: int, matrix: np.ndarray, name: str) -> SteinFunction:
    return SteinFunction(n, lambda z: matrix @ z, jacobian=lambda z: matrix, name=name)


def _random_matrix(n: int, seed: rng.SeedType) -> np.ndarray:
    return rng.generator(seed).standard_normal((n, n)) / np.sqrt(n)


def _constant(n: int, seed: rng.SeedType = 0) -> SteinFunction:
    mean = np.full(n, np.sqrt(3.0 / n))
    return SteinFunction(n, lambda z: mean, jacobian=lambda z: np.zeros((n, n)), name="constant")


def _soft_threshold(n: int, seed: rng.SeedType = 0) -> SteinFunction:
    return SteinFunction(n, lambda z: penalties.soft_threshold(z, 1.0),
                         jacobian=lambda z: np.diag((np.abs(z) > 1.0).astype(float)), name="soft-threshold")


def _shifted_tanh(n: int, seed: rng.SeedType = 0) -> SteinFunction:
    root = np.sqrt(n)
    return SteinFunction(n, lambda z: 1.0 + np.tanh(z) / root,
                         jacobian=lambda z: np.diag(1.0 / np.cosh(z) ** 2 / root), name="shifted-tanh")


def _cubic_radial(n: int, seed: rng.SeedType = 0) -> SteinFunction:
    def evaluate(z):
        return z * (1 + float(z @ z) / n)

    def jacobian(z):
        return (1 + float(z @ z) / n) * np.eye(n) + 2 * np.outer(z, z) / n

    return SteinFunction(n, evaluate, jacobian=jacobian, name="cubic-radial")


def _symmetric(n: int, seed: rng.SeedType = 0) -> SteinFunction:
    matrix = _random_matrix(n, seed)
    return _linear(n, (matrix + matrix.T) / np.sqrt(2), "linear-symmetric")


REGISTRY: typing.Dict[str, typing.Callable[..., SteinFunction]] = {
    "constant": _constant,
    "linear-identity": lambda n, seed=0: _linear(n, np.eye(n), "linear-identity"),
    "linear-symmetric": _symmetric,
    "linear-asymmetric": lambda n, seed=0: _linear(n, _random_matrix(n, seed), "linear-asymmetric"),
    "soft-threshold": _soft_threshold,
    "shifted-tanh": _shifted_tanh,
    "cubic-radial": _cubic_radial,
    "regression": lambda n, seed=0: regression_function(n=n, p=max(1, n // 2), s=max(1, n // 10), seed=seed)
}
"""The test functions, built from (n, seed)"""


def make_stein_function(name: str, n: int, seed: rng.SeedType = 0) -> SteinFunction:
    """Builds a registered test function"""
    if name not in REGISTRY:
        raise errors.InputError(errors.error_message("Unknown Stein function", reason=str(name),
                                                     message="available: {}".format(", ".join(sorted(REGISTRY)))))
    if int(n) < 1:
        raise errors.InputError(errors.error_message("Invalid dimension", reason="n should be at least 1"))
    return REGISTRY[name](int(n), seed=seed)

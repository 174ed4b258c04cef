"""
inference.py

Variance estimates, pivots and confidence intervals for θ = ⟨a₀, β⟩.

With r = y − Xβ̂, d = n − d̂f, b = ⟨a₀, β̂⟩, c = ⟨z₀, r⟩ and F = ‖I − Ĥ‖_F²:

    V̂(θ) = ‖r‖² + F(b − θ)²
    V̌    = ‖r‖² + F c²/d²          (V̂ at θ = ⟨a₀, β̂^(de-bias)⟩ = b + c/d)
    V*(θ) = ‖r‖² + tr[(∇f(z₀))²]   (a quadratic in θ through ⟨a₀, h⟩ = b − θ)
"""

import typing

import numpy as np
import scipy.special

from debiasing import debias, errors
from debiasing import penalty as penalties
from debiasing.fit import FitResult
from debiasing.model import Direction, RegressionInstance

VarianceKind = typing.Literal["resid", "vhat", "vcheck", "vstar"]
IntervalKind = typing.Literal["narrow", "spike", "quadratic"]

VARIANCE_KINDS: typing.Tuple[VarianceKind, ...] = ("resid", "vhat", "vcheck", "vstar")
INTERVAL_KINDS: typing.Tuple[IntervalKind, ...] = ("narrow", "spike", "quadratic")


def normal_quantile(alpha: float) -> float:
    """z_{α/2}, the (1 − α/2) quantile of N(0, 1)"""
    alpha = float(alpha)
    if not 0 < alpha < 1:
        raise errors.InputError(errors.error_message("Invalid confidence level", reason="alpha should be in (0, 1)"))
    return float(scipy.special.ndtri(1 - alpha / 2))


class Quadratic():
    """c2·θ² + c1·θ + c0"""

    def __init__(self, c0: float, c1: float, c2: float) -> None:
        self.c0, self.c1, self.c2 = float(c0), float(c1), float(c2)

    def __call__(self, theta: float) -> float:
        return (self.c2 * theta + self.c1) * theta + self.c0

    @property
    def coefficients(self) -> typing.Tuple[float, float, float]:
        return self.c0, self.c1, self.c2

    def __repr__(self) -> str:
        return "Quadratic({:.6g}·θ² + {:.6g}·θ + {:.6g})".format(self.c2, self.c1, self.c0)


class VarianceEstimates():
    """
    The variance estimates of one (fit, direction) pair

    `v_star` is only available when w₀ could be computed.
    """

    def __init__(self, n: int, df: float, residual_sq: float, frob_IminusH_sq: float, a0_dot_beta_hat: float,
                 z0_dot_residual: float, w0_dot_residual: float, cross: float, w0_norm_sq: float) -> None:
        self.n = int(n)
        self.df = float(df)
        self.gap = self.n - self.df
        """n − d̂f"""
        self.v_resid = float(residual_sq)
        self.frob_IminusH_sq = float(frob_IminusH_sq)
        self.a0_dot_beta_hat = float(a0_dot_beta_hat)
        self.z0_dot_residual = float(z0_dot_residual)
        self.w0_dot_residual = float(w0_dot_residual)
        self.w0_norm_sq = float(w0_norm_sq)
        F, b = self.frob_IminusH_sq, self.a0_dot_beta_hat
        self.v_hat = Quadratic(self.v_resid + F * b * b, -2 * F * b, F)
        """V̂(θ)"""
        self.v_check = self.v_resid + F * self.z0_dot_residual ** 2 / self.gap ** 2
        # tr[J²] = F t² + 2 t q + s² with t = b − θ, q = rᵀ(I − Ĥ)w₀ and s = ⟨w₀, r⟩
        q, s = float(cross), self.w0_dot_residual
        self.v_star = Quadratic(self.v_resid + F * b * b + 2 * q * b + s * s, -2 * F * b - 2 * q, F)
        """V*(θ) = ‖r‖² + tr[(∇f(z₀))²]"""

    @property
    def v_hat_coeffs(self) -> typing.Tuple[float, float, float]:
        """(c0, c1, c2) with V̂(θ) = c2θ² + c1θ + c0"""
        return self.v_hat.coefficients

    @property
    def center(self) -> float:
        """⟨a₀, β̂^(de-bias)⟩ = ⟨a₀, β̂⟩ + ⟨z₀, r⟩/(n − d̂f)"""
        return self.a0_dot_beta_hat + self.z0_dot_residual / self.gap

    @property
    def theta_hat(self) -> float:
        """θ̂ = ⟨a₀, β̂⟩ + ⟨z₀ + w₀, r⟩/(n − d̂f)"""
        return self.center + self.w0_dot_residual / self.gap

    def variance(self, kind: VarianceKind, theta: float = None) -> float:
        """V₀ for one of the four choices (θ is needed for vhat and vstar)"""
        if kind == "resid":
            return self.v_resid
        if kind == "vcheck":
            return self.v_check
        if kind in ("vhat", "vstar"):
            if theta is None:
                raise errors.InputError(errors.error_message("Invalid input", reason="theta required for {}".format(kind)))
            return self.v_hat(theta) if kind == "vhat" else self.v_star(theta)
        raise errors.InputError(errors.error_message("Unknown variance estimate", reason=str(kind)))

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {
            "df": self.df,
            "v_resid": self.v_resid,
            "v_hat_coeffs": list(self.v_hat_coeffs),
            "v_check": self.v_check,
            "v_star_coeffs": list(self.v_star.coefficients)
        }

    def __repr__(self) -> str:
        return "VarianceEstimates(v_resid={:.6g}, v_check={:.6g})".format(self.v_resid, self.v_check)


def variance_estimates(fit: FitResult, direction: Direction, pen: penalties.Penalty, instance: RegressionInstance = None,
                       operator: debias.HatOperator = None, degrees: float = None) -> VarianceEstimates:
    """
    Computes V̂, V̌ and V* for a fit and a direction

    `operator` and `degrees` let several directions share one factorization.

    Raises
    ------
    DegenerateCorrection
        If d̂f ≥ n − 1e-8
    """
    instance = instance if instance is not None else fit.instance
    operator = operator if operator is not None else debias.hat_operator(fit, pen, instance)
    degrees = degrees if degrees is not None else debias.df(fit, pen, instance)
    if instance.n - degrees < debias.DEGENERATE_GAP:
        raise errors.DegenerateCorrection(errors.error_message("Degenerate correction", reason="n − df = {:.3g}".format(instance.n - degrees)))
    correction = debias.w0(fit, pen, direction, instance, operator=operator)
    residual = fit.residual
    cross = float(residual @ (correction - operator.apply(correction)))
    return VarianceEstimates(instance.n, degrees, float(residual @ residual), operator.complement_frobenius_sq(),
                             direction.theta(fit.beta_hat), float(direction.z0 @ residual), float(correction @ residual),
                             cross, float(correction @ correction))


def pivot(fit: FitResult, direction: Direction, pen: penalties.Penalty, instance: RegressionInstance, theta_true: float,
          v0: VarianceKind = "vhat", estimates: VarianceEstimates = None) -> float:
    """
    (n − d̂f)(θ̂ − θ)/V₀^{1/2}

    Raises
    ------
    InvalidVariance
        If V₀ ≤ 0
    """
    estimates = estimates if estimates is not None else variance_estimates(fit, direction, pen, instance)
    variance = estimates.variance(v0, theta_true)
    if not variance > 0:
        raise errors.InvalidVariance(errors.error_message("Invalid variance", reason="V0 = {:.3g} for {}".format(variance, v0)))
    return estimates.gap * (estimates.theta_hat - float(theta_true)) / np.sqrt(variance)


class ConfidenceInterval():
    """A confidence interval for θ"""

    def __init__(self, lo: float, hi: float, kind: IntervalKind, alpha: float, valid: bool = True, reason: str = None) -> None:
        self.lo = float(lo)
        self.hi = float(hi)
        self.kind = kind
        self.alpha = float(alpha)
        self.valid = bool(valid)
        self.reason = reason

    @property
    def width(self) -> float:
        return self.hi - self.lo if self.valid else float("inf")

    def __contains__(self, theta: float) -> bool:
        return self.valid and self.lo <= theta <= self.hi

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        result = {"kind": self.kind, "alpha": self.alpha, "valid": self.valid}
        if self.valid:
            result.update({"lo": self.lo, "hi": self.hi})
        else:
            result["reason"] = self.reason
        return result

    def __repr__(self) -> str:
        if not self.valid:
            return "ConfidenceInterval({}, invalid: {})".format(self.kind, self.reason)
        return "ConfidenceInterval({}, [{:.6g}, {:.6g}])".format(self.kind, self.lo, self.hi)


def _estimates(fit: FitResult, direction: Direction, pen: penalties.Penalty, estimates: typing.Optional[VarianceEstimates]) -> VarianceEstimates:
    return estimates if estimates is not None else variance_estimates(fit, direction, pen, fit.instance)


def ci_narrow(fit: FitResult, direction: Direction, pen: penalties.Penalty, alpha: float = 0.05,
              estimates: VarianceEstimates = None) -> ConfidenceInterval:
    """⟨a₀, β̂^(de-bias)⟩ ± z_{α/2}‖r‖/(n − d̂f)"""
    z = normal_quantile(alpha)
    estimates = _estimates(fit, direction, pen, estimates)
    half = z * np.sqrt(estimates.v_resid) / estimates.gap
    return ConfidenceInterval(estimates.center - half, estimates.center + half, "narrow", alpha)


def ci_spike(fit: FitResult, direction: Direction, pen: penalties.Penalty, alpha: float = 0.05,
             estimates: VarianceEstimates = None) -> ConfidenceInterval:
    """⟨a₀, β̂^(de-bias)⟩ ± z_{α/2}(‖r‖²/d² + F⟨z₀, r⟩²/d⁴)^{1/2}, a superset of `ci_narrow`"""
    z = normal_quantile(alpha)
    estimates = _estimates(fit, direction, pen, estimates)
    d = estimates.gap
    half = z * np.sqrt(estimates.v_resid / d ** 2 + estimates.frob_IminusH_sq * estimates.z0_dot_residual ** 2 / d ** 4)
    return ConfidenceInterval(estimates.center - half, estimates.center + half, "spike", alpha)


def solve_quadratic_ci(a0_dot_beta_hat: float, z0_dot_residual: float, gap: float, residual_sq: float,
                       frob_IminusH_sq: float, z: float, alpha: float = None) -> ConfidenceInterval:
    """
    The roots of [d(b − θ) + c]² − z²V̂(θ) = 0

    The equation is solved for u = θ − (b + c/d), where it reads
    (d² − z²F)u² − 2z²F(c/d)u − z²V̌ = 0, with the stable formula
    q = −(B + sgn(B)√Δ)/2 and roots q/A, C/q. When A = d² − z²F ≤ 0 the set is
    unbounded and an invalid interval is returned.
    """
    b, c, d, F = float(a0_dot_beta_hat), float(z0_dot_residual), float(gap), float(frob_IminusH_sq)
    alpha = 2 * (1 - float(scipy.special.ndtr(z))) if alpha is None else float(alpha)
    A = d * d - z * z * F
    if not A > 0:
        return ConfidenceInterval(float("nan"), float("nan"), "quadratic", alpha, valid=False, reason="unbounded CI")
    center = b + c / d
    B = -2 * z * z * F * c / d
    C = -z * z * (residual_sq + F * c * c / (d * d))
    discriminant = B * B - 4 * A * C
    if discriminant < 0:
        # A > 0 and C ≤ 0 make the discriminant nonnegative
        raise errors.NumericalError(errors.error_message("Negative discriminant", reason="{:.3g}".format(discriminant)))
    q = -(B + (1.0 if B >= 0 else -1.0) * np.sqrt(discriminant)) / 2
    if q == 0:
        return ConfidenceInterval(center, center, "quadratic", alpha)
    first, second = q / A, C / q
    return ConfidenceInterval(center + min(first, second), center + max(first, second), "quadratic", alpha)


def ci_quadratic(fit: FitResult, direction: Direction, pen: penalties.Penalty, alpha: float = 0.05,
                 estimates: VarianceEstimates = None) -> ConfidenceInterval:
    """
    {θ : [(n − d̂f)(⟨a₀,β̂⟩ − θ) + ⟨z₀, r⟩]² ≤ z²_{α/2}V̂(θ)}

    The interval contains ⟨a₀, β̂^(de-bias)⟩ whenever it is valid.
    """
    z = normal_quantile(alpha)
    estimates = _estimates(fit, direction, pen, estimates)
    return solve_quadratic_ci(estimates.a0_dot_beta_hat, estimates.z0_dot_residual, estimates.gap,
                              estimates.v_resid, estimates.frob_IminusH_sq, z, alpha=alpha)


class IntervalSet():
    """The three intervals and the reported one"""

    def __init__(self, narrow: ConfidenceInterval, spike: ConfidenceInterval, quadratic: ConfidenceInterval) -> None:
        self.narrow = narrow
        self.spike = spike
        self.quadratic = quadratic

    @property
    def default(self) -> ConfidenceInterval:
        """The quadratic interval when valid, the spike interval otherwise"""
        return self.quadratic if self.quadratic.valid else self.spike

    def __getitem__(self, kind: IntervalKind) -> ConfidenceInterval:
        return getattr(self, kind)

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {
            "narrow": self.narrow.to_dict(),
            "spike": self.spike.to_dict(),
            "quadratic": self.quadratic.to_dict(),
            "default": self.default.kind
        }


def confidence_intervals(fit: FitResult, direction: Direction, pen: penalties.Penalty, alpha: float = 0.05,
                         estimates: VarianceEstimates = None) -> IntervalSet:
    estimates = _estimates(fit, direction, pen, estimates)
    return IntervalSet(ci_narrow(fit, direction, pen, alpha, estimates=estimates),
                       ci_spike(fit, direction, pen, alpha, estimates=estimates),
                       ci_quadratic(fit, direction, pen, alpha, estimates=estimates))


class SpikeDiagnostics():
    """
    Observable indicators of the variance spike

    item_v:   ⟨z₀, r⟩²/(n‖r‖²), vanishing without spike
    item_vi:  V̂(θ)/‖r‖², close to 1 without spike (needs θ)
    item_vii: V̌/‖r‖², close to 1 without spike
    item_iv:  n⟨a₀, h⟩²/‖r‖², vanishing without spike (needs θ)
    w0_term:  ⟨w₀, r⟩²/V̂(θ) (V̌ when θ is unknown), negligible in general
    """

    def __init__(self, item_v: float, item_vi: typing.Optional[float], item_vii: float,
                 item_iv: typing.Optional[float], w0_term: float) -> None:
        self.item_v = item_v
        self.item_vi = item_vi
        self.item_vii = item_vii
        self.item_iv = item_iv
        self.w0_term = w0_term

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {
            "item_iv": self.item_iv,
            "item_v": self.item_v,
            "item_vi": self.item_vi,
            "item_vii": self.item_vii,
            "w0_term": self.w0_term
        }

    def __repr__(self) -> str:
        return "SpikeDiagnostics({})".format(self.to_dict())


def spike_diagnostics(fit: FitResult, direction: Direction, pen: penalties.Penalty, instance: RegressionInstance = None,
                      theta: float = None, estimates: VarianceEstimates = None) -> SpikeDiagnostics:
    """
    Computes the spike indicators

    θ defaults to ⟨a₀, β⟩ when the instance carries its truth.
    """
    instance = instance if instance is not None else fit.instance
    estimates = estimates if estimates is not None else variance_estimates(fit, direction, pen, instance)
    if theta is None and instance.truth is not None:
        theta = direction.theta(instance.truth.beta)
    residual_sq = estimates.v_resid
    if not residual_sq > 0:
        nan = float("nan")
        return SpikeDiagnostics(nan, nan, nan, nan, nan)
    item_v = estimates.z0_dot_residual ** 2 / (instance.n * residual_sq)
    item_vii = estimates.v_check / residual_sq
    item_vi = item_iv = None
    reference = estimates.v_check
    if theta is not None:
        item_vi = estimates.v_hat(theta) / residual_sq
        item_iv = instance.n * (estimates.a0_dot_beta_hat - float(theta)) ** 2 / residual_sq
        reference = estimates.v_hat(theta)
    return SpikeDiagnostics(item_v, item_vi, item_vii, item_iv, estimates.w0_dot_residual ** 2 / reference)


class DirectionTest():
    """A two-sided test of H₀: θ = θ₀"""

    def __init__(self, theta0: float, statistic: float, p_value: float) -> None:
        self.theta0 = float(theta0)
        self.statistic = float(statistic)
        self.p_value = float(p_value)

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {"theta0": self.theta0, "statistic": self.statistic, "p_value": self.p_value}

    def __repr__(self) -> str:
        return "DirectionTest(theta0={:.6g}, statistic={:.4g}, p_value={:.4g})".format(self.theta0, self.statistic, self.p_value)


def test_direction(fit: FitResult, direction: Direction, pen: penalties.Penalty, theta0: float,
                   estimates: VarianceEstimates = None) -> DirectionTest:
    """
    Tests θ = θ₀ with the pivot studentized by V̂(θ₀)

    The p-value 2(1 − Φ(|T|)) is below α exactly when θ₀ lies outside the
    quadratic interval of level α.
    """
    estimates = _estimates(fit, direction, pen, estimates)
    variance = estimates.v_hat(theta0)
    if not variance > 0:
        raise errors.InvalidVariance(errors.error_message("Invalid variance", reason="V̂(θ0) = {:.3g}".format(variance)))
    # the numerator without w₀, matching the interval construction
    statistic = estimates.gap * (estimates.center - float(theta0)) / np.sqrt(variance)
    return DirectionTest(theta0, statistic, 2 * float(scipy.special.ndtr(-abs(statistic))))


test_direction.__test__ = False

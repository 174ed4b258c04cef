import warnings

import numpy as np
import pytest

import debiasing
from debiasing import debias, penalty
from debiasing.fit import FitResult

from . import init

SHAPES = [(init.SMALL_N, init.SMALL_P), (init.N, init.P)]


def penalties_for(p: int):
    return [
        penalty.Lasso(0.1),
        penalty.Ridge(0.2),
        penalty.ElasticNet(0.1, 0.05),
        penalty.GroupLasso.contiguous(p, 2, 0.12),
        penalty.Smooth.log_cosh(0.05, mu=0.02)
    ]


def frobenius_relative(actual, expected) -> float:
    return float(np.linalg.norm(actual - expected) / max(np.linalg.norm(expected), 1e-12))


def test_hat_matches_finite_differences():
    init.log("debias ~ Testing Ĥ against finite differences")
    for n, p in SHAPES:
        instance = init.init_instance(n, p, s=3)
        for pen in penalties_for(p):
            fitted = debiasing.fit(instance, pen, tol=1e-12)
            hat = debias.hat_H(fitted, pen, instance)
            numeric = debias.finite_diff_H(instance, pen)
            assert frobenius_relative(hat, numeric) < 1e-5, pen.label
            assert debias.df(fitted, pen, instance) == pytest.approx(np.trace(numeric), rel=1e-6, abs=1e-5)
            assert np.linalg.norm(numeric - numeric.T) / max(np.linalg.norm(numeric), 1e-12) < 1e-4

            eigenvalues = np.linalg.eigvalsh(hat)
            assert eigenvalues.min() >= -1e-8 and eigenvalues.max() <= 1 + 1e-8
            operator = debias.hat_operator(fitted, pen, instance)
            degrees = operator.trace()
            assert operator.complement_frobenius_sq() == pytest.approx(np.linalg.norm(np.eye(n) - hat) ** 2, rel=1e-8)
            assert operator.frobenius_sq() == pytest.approx(np.linalg.norm(hat) ** 2, rel=1e-8, abs=1e-10)
            assert (n - degrees) * (1 - degrees / n) - 1e-6 <= operator.complement_frobenius_sq() <= n - degrees + 1e-6


@init.use_lasso_fit
def test_lasso_projector(instance, pen, fitted):
    init.log("debias ~ Testing the Lasso projector")
    hat = debias.hat_H(fitted, pen, instance)
    assert np.allclose(hat @ hat, hat, atol=1e-8)
    assert np.allclose(hat, hat.T, atol=1e-12)
    assert np.trace(hat) == pytest.approx(fitted.active_size, abs=1e-8)
    assert debias.df(fitted, pen, instance) == fitted.active_size


@init.use_small_instance
def test_ridge_df(instance):
    init.log("debias ~ Testing the ridge degrees of freedom")
    pen = penalty.Ridge(0.4)
    fitted = debiasing.fit(instance, pen)
    assert debias.df(fitted, pen, instance) == pytest.approx(np.trace(debias.hat_H(fitted, pen, instance)), abs=1e-8)

    gram_norm = np.linalg.norm(instance.X.T @ instance.X, 2)
    heavy = penalty.Ridge(1e6 * gram_norm / instance.n)
    fitted = debiasing.fit(instance, heavy)
    assert np.linalg.norm(debias.hat_H(fitted, heavy, instance), 2) < 1e-5


@init.use_small_instance
def test_least_squares(instance, direction):
    init.log("debias ~ Testing the unpenalized fit")
    pen = penalty.Smooth.least_squares()
    fitted = debiasing.fit(instance, pen)
    assert debias.df(fitted, pen, instance) == pytest.approx(instance.p, abs=1e-8)
    assert np.allclose(debias.debias_vector(fitted, instance, instance.cov), fitted.beta_hat, atol=1e-8)

    # θ̂ − θ = a₀ᵀ(XᵀX)⁻¹Xᵀε
    expected = direction.a0 @ np.linalg.solve(instance.X.T @ instance.X, instance.X.T @ instance.noise)
    estimate = debias.theta_hat(fitted, direction, pen, instance)
    assert estimate - direction.theta(instance.truth.beta) == pytest.approx(expected, abs=1e-8)


def test_group_lasso_M():
    init.log("debias ~ Testing the group Lasso matrix M")
    instance = debiasing.RegressionInstance(np.arange(5.0), np.ones((5, 3)) + np.eye(5, 3))
    pen = penalty.GroupLasso([[0, 1], [2]], [2.0, 1.0])
    fitted = FitResult(np.array([3.0, 4.0, 0.0]), instance, pen, 1)
    M = debias.group_lasso_M(fitted, pen.groups, pen.lambdas)
    assert np.allclose(M, 2 * np.array([[16.0, -12.0], [-12.0, 9.0]]) / 25)
    assert np.allclose(M @ fitted.beta_hat[fitted.active], 0.0)

    fitted = FitResult(np.array([3.0, 4.0, -2.0]), instance, pen, 1)
    M = debias.group_lasso_M(fitted, pen.groups, pen.lambdas)
    assert M.shape == (3, 3)
    assert M[2, 2] == 0.0

    fitted = FitResult(np.array([3.0, 4.0, 5e-8]), instance, pen, 1)
    with pytest.warns(debiasing.errors.IllConditionedGroupWarning):
        debias.group_lasso_M(fitted, pen.groups, pen.lambdas)


@init.use_lasso_fit
def test_w0(instance, pen, fitted, direction):
    init.log("debias ~ Testing w0")
    inactive = int(fitted.inactive[0])
    a = np.zeros(instance.p)
    a[inactive] = 1.0
    outside = debiasing.normalize_direction(a, instance.cov, instance.X)
    assert np.allclose(debias.w0(fitted, pen, outside, instance), 0.0)

    first = debiasing.normalize_direction(init.sparse_beta(instance.p, 3), instance.cov, instance.X)
    second = direction
    combined = debiasing.model.Direction(first.a0 + 2.5 * second.a0, first.u0, first.z0)
    assert np.allclose(debias.w0(fitted, pen, combined, instance),
                       debias.w0(fitted, pen, first, instance) + 2.5 * debias.w0(fitted, pen, second, instance), atol=1e-10)


def test_w0_norm_bound():
    init.log("debias ~ Testing the norm bound of w0")
    for n, p in SHAPES:
        instance = init.init_instance(n, p, s=3)
        direction = init.init_direction(instance)
        for pen in penalties_for(p):
            fitted = debiasing.fit(instance, pen)
            with warnings.catch_warnings():
                warnings.simplefilter("error", debiasing.errors.NormBoundWarning)
                debias.w0(fitted, pen, direction, instance)


def test_grad_matches_finite_differences():
    init.log("debias ~ Testing ∇f(z0) against finite differences")
    for n, p in SHAPES:
        instance = init.init_instance(n, p, s=3)
        direction = init.init_direction(instance)
        for pen in penalties_for(p):
            fitted = debiasing.fit(instance, pen, tol=1e-12)
            summary = debias.grad_f_z0(fitted, pen, direction, instance)
            numeric = debias.finite_diff_grad_f_z0(instance, pen, direction)
            assert frobenius_relative(summary.matrix, numeric) < 1e-4, pen.label
            assert summary.trace_sq == pytest.approx(np.trace(summary.matrix @ summary.matrix), rel=1e-8, abs=1e-8)
            assert summary.frobenius_sq == pytest.approx(np.linalg.norm(summary.matrix) ** 2, rel=1e-8)


@init.use_lasso_fit
def test_grad_special_cases(instance, pen, fitted, direction):
    init.log("debias ~ Testing ∇f(z0) special cases")
    summary = debias.grad_f_z0(fitted, pen, direction, instance, theta=direction.theta(fitted.beta_hat))
    correction = debias.w0(fitted, pen, direction, instance)
    assert summary.direction_error == 0.0
    assert np.allclose(summary.matrix, np.outer(correction, fitted.residual))
    assert np.linalg.matrix_rank(summary.matrix) <= 1

    inactive = int(fitted.inactive[0])
    a = np.zeros(instance.p)
    a[inactive] = 1.0
    outside = debiasing.normalize_direction(a, instance.cov, instance.X)
    summary = debias.grad_f_z0(fitted, pen, outside, instance, theta=0.5)
    assert summary.trace_sq == pytest.approx(summary.direction_error ** 2 * (instance.n - fitted.active_size))

    bare = debiasing.RegressionInstance(instance.y, instance.X)
    bare_fit = debiasing.fit(bare, pen)
    with pytest.raises(debiasing.errors.InputError, match="theta required"):
        debias.grad_f_z0(bare_fit, pen, direction, bare)
    assert debias.grad_f_z0(fitted, pen, direction, instance, materialize=False).matrix is None


def test_xi0_identity():
    init.log("debias ~ Testing −ξ0 = (n − df)(θ̂ − θ)")
    for n, p in SHAPES:
        instance = init.init_instance(n, p, s=3)
        direction = init.init_direction(instance)
        theta = direction.theta(instance.truth.beta)
        for pen in penalties_for(p):
            fitted = debiasing.fit(instance, pen)
            gap = n - debias.df(fitted, pen, instance)
            expected = gap * (debias.theta_hat(fitted, direction, pen, instance) - theta)
            assert -debias.xi0(fitted, pen, direction, instance) == pytest.approx(expected, rel=1e-6, abs=1e-9)

            summary = debias.grad_f_z0(fitted, pen, direction, instance)
            divergence = float(np.trace(summary.matrix))
            assert debias.xi0(fitted, pen, direction, instance) == pytest.approx(
                float(direction.z0 @ (-fitted.residual)) - divergence, rel=1e-6, abs=1e-9)


@init.use_lasso_fit
def test_debias_vector(instance, pen, fitted, direction):
    init.log("debias ~ Testing the de-biased vector")
    degrees = debias.df(fitted, pen, instance)
    vector = debias.debias_vector(fitted, instance, instance.cov)
    correction = debias.w0(fitted, pen, direction, instance)
    estimate = debias.theta_hat(fitted, direction, pen, instance)
    assert direction.a0 @ vector == pytest.approx(estimate - correction @ fitted.residual / (instance.n - degrees), abs=1e-10)

    lam_max = float(np.max(np.abs(instance.X.T @ instance.y))) / instance.n
    null = debiasing.fit(instance, penalty.Lasso(2 * lam_max))
    assert np.allclose(debias.debias_vector(null, instance, instance.cov), instance.X.T @ instance.y / instance.n)


def test_degenerate_and_interpolating():
    init.log("debias ~ Testing degenerate corrections and interpolating fits")
    X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    instance = debiasing.RegressionInstance(X @ np.array([1.0, -2.0]), X)
    pen = penalty.Smooth.least_squares()
    fitted = debiasing.fit(instance, pen)
    assert fitted.interpolating
    direction = debiasing.normalize_direction([1.0, 0.0], debiasing.CovarianceSpec.identity(2), X)
    with pytest.warns(debiasing.errors.InterpolationWarning):
        correction = debias.w0(fitted, pen, direction, instance)
    assert np.all(correction == 0)
    with pytest.warns(debiasing.errors.InterpolationWarning):
        assert debias.theta_hat(fitted, direction, pen, instance) == pytest.approx(direction.theta(fitted.beta_hat), abs=1e-10)

    square = debiasing.RegressionInstance([1.0, 2.0], np.eye(2))
    fitted = debiasing.fit(square, pen)
    with pytest.raises(debiasing.errors.DegenerateCorrection):
        debias.debias_vector(fitted, square, debiasing.CovarianceSpec.identity(2))


@init.use_lasso_fit
def test_debias_report(instance, pen, fitted, direction):
    init.log("debias ~ Testing debias_report")
    report = debias.debias_report(fitted, pen, instance, instance.cov, [direction])
    assert report.df == fitted.active_size
    assert report.frob_IminusH_sq == pytest.approx(instance.n - fitted.active_size)
    assert report.theta_hat == pytest.approx(debias.theta_hat(fitted, direction, pen, instance))
    assert np.allclose(report.w0, debias.w0(fitted, pen, direction, instance))
    assert report.w0_dot_residual == pytest.approx(report.w0 @ fitted.residual)
    assert report.beta_debias.shape == (instance.p,)
    assert set(report.to_dict()) == {"n", "df", "frob_IminusH_sq", "frob_H_sq", "directions"}


def test_nonsmooth_point():
    init.log("debias ~ Testing the nonsmooth point detection")
    # y₁ sits on the threshold, any increase activates the coordinate
    instance = debiasing.RegressionInstance([0.5], [[1.0]])
    with pytest.raises(debiasing.errors.NonsmoothPoint):
        debias.finite_diff_H(instance, penalty.Lasso(0.5), step=1.0)

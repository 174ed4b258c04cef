import importlib
import numpy as np
import pytest

import debiasing
from debiasing import penalty

from . import init

fitting = importlib.import_module("debiasing.fit")


def test_scalar_lasso():
    init.log("fit ~ Testing the scalar Lasso")
    instance = debiasing.RegressionInstance([2.0], [[1.0]])
    result = debiasing.fit(instance, penalty.Lasso(0.5))
    assert result.beta_hat[0] == pytest.approx(1.5)
    assert result.active.tolist() == [0]
    assert np.allclose(result.residual, [0.5])


@init.use_instance
def test_lasso_null(instance):
    init.log("fit ~ Testing the Lasso above λ_max")
    lam_max = float(np.max(np.abs(instance.X.T @ instance.y))) / instance.n
    result = debiasing.fit(instance, penalty.Lasso(1.01 * lam_max))
    assert np.all(result.beta_hat == 0)
    assert result.active_size == 0
    report = debiasing.kkt_report(result, instance, result.penalty)
    assert report.strict
    assert report.inactive.shape[0] == instance.p


@init.use_lasso_fit
def test_lasso(instance, pen, fitted):
    init.log("fit ~ Testing the Lasso")
    assert fitted.kkt_max_violation <= 1e-10
    assert np.allclose(fitted.residual, instance.y - instance.X @ fitted.beta_hat, rtol=1e-12, atol=1e-12)
    assert np.all(np.diff(fitted.objective_history) <= 1e-12)
    assert fitted.kkt_strict.shape[0] == instance.p - fitted.active_size
    assert fitted.objective == pytest.approx(0.5 * fitted.residual @ fitted.residual / instance.n + pen.value(fitted.beta_hat))

    tighter = debiasing.fit(instance, pen, tol=1e-12)
    assert tighter.kkt_max_violation <= 1e-12
    assert np.allclose(tighter.beta_hat, fitted.beta_hat, atol=1e-8)

    warm = debiasing.fit(instance, pen, beta_init=init.sparse_beta(instance.p, instance.p, 3.0))
    assert np.array_equal(warm.active, fitted.active)


def test_lasso_brute_force():
    init.log("fit ~ Testing the Lasso against a grid search")
    instance = init.init_instance(n=6, p=2, s=1, seed=4)
    pen = penalty.Lasso(0.2)
    result = debiasing.fit(instance, pen)

    def objective(b):
        residual = instance.y - instance.X @ b
        return 0.5 * residual @ residual / instance.n + pen.value(b)

    grid = np.linspace(-3, 3, 241)
    best = min(((objective(np.array([u, v])), u, v) for u in grid for v in grid))
    coarse = np.array(best[1:])
    # refine around the best grid point
    for width in (3e-2, 1e-3, 3e-5, 1e-6):
        local = np.linspace(-width, width, 41)
        best = min(((objective(coarse + np.array([u, v])), *(coarse + np.array([u, v]))) for u in local for v in local))
        coarse = np.array(best[1:])
    assert np.allclose(result.beta_hat, coarse, atol=1e-4)
    assert result.objective <= best[0] + 1e-12


@init.use_small_instance
def test_ridge(instance):
    init.log("fit ~ Testing ridge")
    pen = penalty.Ridge(0.3)
    result = debiasing.fit(instance, pen)
    expected = np.linalg.solve(instance.X.T @ instance.X + instance.n * 0.3 * np.eye(instance.p), instance.X.T @ instance.y)
    assert np.allclose(result.beta_hat, expected, rtol=1e-10)

    wide = init.init_instance()
    result = debiasing.fit(wide, pen)
    expected = np.linalg.solve(wide.X.T @ wide.X + wide.n * 0.3 * np.eye(wide.p), wide.X.T @ wide.y)
    assert np.allclose(result.beta_hat, expected, rtol=1e-8)
    assert result.kkt_max_violation < 1e-8


@init.use_instance
def test_elastic_net(instance):
    init.log("fit ~ Testing the elastic net")
    pen = penalty.ElasticNet(0.1, 0.2)
    result = debiasing.fit(instance, pen)
    assert result.kkt_max_violation <= 1e-10
    repeated = debiasing.fit(instance, pen, beta_init=np.ones(instance.p))
    assert np.allclose(repeated.beta_hat, result.beta_hat, atol=1e-8)


@init.use_instance
def test_group_lasso(instance):
    init.log("fit ~ Testing the group Lasso")
    pen = penalty.GroupLasso.contiguous(instance.p, 5, 0.15)
    result = debiasing.fit(instance, pen)
    assert result.kkt_max_violation <= 1e-10
    assert result.active_groups is not None
    for k in result.active_groups:
        assert set(pen.groups[k].tolist()) <= set(result.active.tolist())
    assert np.all(np.diff(result.objective_history) <= 1e-12)
    report = debiasing.kkt_report(result, instance, pen)
    assert report.strict
    assert report.inactive.shape[0] == len(pen.groups) - result.active_groups.shape[0]


@init.use_instance
def test_group_lasso_singletons(instance):
    init.log("fit ~ Testing the group Lasso with singleton groups")
    lasso = debiasing.fit(instance, penalty.Lasso(0.1))
    groups = debiasing.fit(instance, penalty.GroupLasso([[j] for j in range(instance.p)], 0.1))
    assert np.allclose(groups.beta_hat, lasso.beta_hat, atol=1e-8)


@init.use_small_instance
def test_smooth(instance):
    init.log("fit ~ Testing smooth penalties")
    pen = penalty.Smooth.log_cosh(0.05, mu=0.01)
    result = debiasing.fit(instance, pen)
    assert result.kkt_max_violation <= 1e-10
    assert np.all(np.diff(result.objective_history) <= 1e-12)
    gradient = instance.X.T @ result.residual / instance.n
    assert np.allclose(gradient, pen.gradient(result.beta_hat), atol=1e-9)

    ols = debiasing.fit(instance, penalty.Smooth.least_squares())
    assert np.allclose(ols.beta_hat, np.linalg.lstsq(instance.X, instance.y, rcond=None)[0], atol=1e-8)

    wrong = penalty.Smooth(lambda b: float(np.sum(b ** 2)), lambda b: b, lambda b: np.ones_like(b))
    with pytest.raises(debiasing.errors.InputError):
        debiasing.fit(instance, wrong)


@init.use_instance
def test_not_converged(instance):
    init.log("fit ~ Testing the iteration limit")
    with pytest.raises(debiasing.errors.NotConverged) as info:
        debiasing.fit(instance, penalty.Lasso(0.01), max_iter=1)
    assert info.value.beta.shape == (instance.p,)
    assert info.value.violation > 1e-10
    assert info.value.iterations == 1


@init.use_instance
def test_invalid(instance):
    init.log("fit ~ Testing invalid arguments")
    with pytest.raises(debiasing.errors.InputError):
        debiasing.fit(instance, penalty.Lasso(0.1), tol=0)
    with pytest.raises(debiasing.errors.InputError):
        debiasing.fit(instance, penalty.Lasso(0.1), beta_init=np.zeros(instance.p + 1))
    with pytest.raises(debiasing.errors.InputError):
        debiasing.fit(instance, penalty.GroupLasso.contiguous(10, 5, 0.1))


def test_zero_threshold():
    init.log("fit ~ Testing zero_threshold")
    assert fitting.zero_threshold(np.array([0.5, -0.1])) == pytest.approx(1e-8)
    assert fitting.zero_threshold(np.array([0.5, -20.0])) == pytest.approx(2e-7)

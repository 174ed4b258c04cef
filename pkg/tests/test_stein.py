import numpy as np
import pytest

import debiasing
from debiasing import stein

from . import init


def linear(matrix, name="linear"):
    matrix = np.asarray(matrix, dtype=float)
    return stein.SteinFunction(matrix.shape[0], lambda z: matrix @ z, jacobian=lambda z: matrix, name=name)


def test_xi():
    init.log("stein ~ Testing xi")
    z = np.array([0.3, -1.2, 2.0])
    mean = np.array([1.0, 2.0, -1.0])
    constant = stein.SteinFunction(3, lambda z: mean, jacobian=lambda z: np.zeros((3, 3)))
    assert stein.xi(constant, z) == pytest.approx(z @ mean)
    assert stein.xi(linear(np.eye(3)), z) == pytest.approx(z @ z - 3)
    assert stein.xi(linear([[0.0, 1.0], [0.0, 0.0]]), [1.5, -2.0]) == pytest.approx(-3.0)

    numeric = stein.SteinFunction(3, np.tanh)
    assert numeric.mode == "finite_difference"
    assert stein.xi(numeric, z) == pytest.approx(z @ np.tanh(z) - np.sum(1 / np.cosh(z) ** 2), rel=1e-8)
    assert np.allclose(numeric.jacobian(z), np.diag(1 / np.cosh(z) ** 2), atol=1e-8)

    broken = stein.SteinFunction(3, np.tanh, jacobian=lambda z: np.full((3, 3), np.nan))
    with pytest.raises(debiasing.errors.NonsmoothPoint):
        stein.xi(broken, z)
    with pytest.raises(debiasing.errors.InputError):
        stein.xi(numeric, [1.0, 2.0])
    with pytest.raises(debiasing.errors.InputError):
        stein.xi(numeric, [1.0, np.inf, 0.0])


def test_stein_function():
    init.log("stein ~ Testing SteinFunction")
    with pytest.raises(debiasing.errors.InputError):
        stein.SteinFunction(3, np.tanh, mode="analytic")
    with pytest.raises(debiasing.errors.InputError):
        stein.SteinFunction(3, np.tanh, mode="exact")
    with pytest.raises(debiasing.errors.InputError):
        stein.SteinFunction(3, lambda z: z[:2])(np.zeros(3))

    cubic = stein.make_stein_function("cubic-radial", 6)
    cubic.check_consistency()
    terms = cubic.terms(np.arange(6.0) / 3)
    assert terms.trace_sq == pytest.approx(np.trace(terms.jacobian @ terms.jacobian))
    assert terms.frobenius_sq == pytest.approx(np.linalg.norm(terms.jacobian) ** 2)

    wrong = stein.SteinFunction(4, np.sin, jacobian=lambda z: np.diag(np.sin(z)))
    with pytest.raises(debiasing.errors.InputError):
        wrong.check_consistency()


def test_variance_estimators():
    init.log("stein ~ Testing the variance estimators")
    z = np.array([1.0, -2.0, 0.5, 0.0])
    assert stein.variance_estimator(linear(np.eye(4)), z) == pytest.approx(z @ z + 4)
    constant = stein.make_stein_function("constant", 4)
    assert stein.variance_estimator(constant, z) == pytest.approx(3.0)
    assert stein.consistent_variance_estimator(constant, z) == pytest.approx(3.0)
    asymmetric = linear([[0.0, 1.0], [0.0, 0.0]])
    # tr[J²] = 0 for a nilpotent J
    assert stein.variance_estimator(asymmetric, [1.0, 2.0]) == pytest.approx(4.0)


def test_second_order_identity():
    init.log("stein ~ Testing the second order Stein formula")
    check = stein.second_order_stein_check(stein.make_stein_function("linear-identity", 5), reps=20000, seed=1)
    assert check.lhs == pytest.approx(10.0, rel=0.05)
    assert check.rhs == pytest.approx(10.0, rel=0.05)
    assert abs(check.z_score) < 4
    assert abs(check.mean_xi) < 4 * check.mean_xi_se

    check = stein.second_order_stein_check(stein.make_stein_function("constant", 8), reps=20000, seed=2)
    assert check.rhs == pytest.approx(3.0)
    assert check.lhs == pytest.approx(3.0, rel=0.05)

    for name in ("soft-threshold", "linear-asymmetric", "shifted-tanh"):
        check = stein.second_order_stein_check(stein.make_stein_function(name, 10), reps=20000, seed=3)
        assert abs(check.z_score) < 4, name
        assert abs(check.mean_xi) < 4 * check.mean_xi_se, name
    assert set(check.to_dict()) == {"reps", "lhs", "lhs_se", "rhs", "rhs_se", "z_score", "mean_xi", "mean_xi_se"}

    with pytest.raises(debiasing.errors.InputError):
        stein.second_order_stein_check(stein.make_stein_function("constant", 2), reps=99)


def test_approximation_report():
    init.log("stein ~ Testing approximation_report")
    report = stein.approximation_report(stein.make_stein_function("constant", 5), reps=5000, seed=0)
    assert abs(report.eps1_sq) < 0.05
    assert report.mu_bar @ report.mu_bar == pytest.approx(3.0)

    report = stein.approximation_report(stein.make_stein_function("linear-symmetric", 8), reps=5000, seed=0)
    assert abs(report.eps12_sq) < 0.1
    assert report.eps1_sq > 0.9
    assert report.eps1_sq <= report.eps1_bar_sq + 0.05
    assert report.eps12_sq <= report.eps1_sq + 0.05
    assert report.A_bar.shape == (8, 8)

    report = stein.approximation_report(stein.make_stein_function("cubic-radial", 200), reps=1000, seed=0)
    # odd f, so E f = 0 and the first order approximation carries nothing
    assert report.eps1_sq > 0.9
    assert report.eps1_sq <= report.eps1_bar_sq + 0.05
    assert 0 <= report.eps1_bbar_sq <= 1

    with pytest.raises(debiasing.errors.InputError):
        stein.approximation_report(stein.make_stein_function("constant", 2), reps=999)
    zero = stein.SteinFunction(3, lambda z: np.zeros(3), jacobian=lambda z: np.zeros((3, 3)))
    with pytest.raises(debiasing.errors.Degenerate):
        stein.approximation_report(zero, reps=1000)


def test_sketched_report(monkeypatch):
    init.log("stein ~ Testing the sketched approximation of the mean Jacobian")
    full = stein.approximation_report(stein.make_stein_function("linear-identity", 30), reps=1000, seed=4)
    monkeypatch.setattr(stein, "FULL_MATRIX_LIMIT", 10)
    sketched = stein.approximation_report(stein.make_stein_function("linear-identity", 30), reps=1000, seed=4)
    assert sketched.A_bar is None
    # for Ā = I both sketched norms are exact
    assert sketched.discriminant == pytest.approx(full.discriminant, rel=1e-2)
    assert sketched.eps12_sq == pytest.approx(full.eps12_sq, abs=1e-2)


def test_studentized_normality():
    init.log("stein ~ Testing the normality of the studentized ξ")
    report = stein.approximation_report(stein.make_stein_function("shifted-tanh", 50), reps=10000, seed=5)
    assert report.eps1_bar_sq < 0.01
    assert report.ks_studentized < 0.05


def test_regression_function():
    init.log("stein ~ Testing the regression adapter")
    sf = stein.regression_function(n=30, p=15, s=3, seed=1)
    z = debiasing.utils.rng.generator(2).standard_normal(30)
    terms = sf.terms(z)
    jacobian = sf.jacobian(z)
    assert terms.divergence == pytest.approx(np.trace(jacobian), rel=1e-8)
    assert terms.trace_sq == pytest.approx(np.trace(jacobian @ jacobian), rel=1e-8)
    assert terms.divergence == pytest.approx(np.trace(sf.finite_difference_jacobian(z)), rel=1e-3)
    assert np.allclose(terms.value, sf(z))

    instance = debiasing.RegressionInstance(sf.instance.y, sf.instance.X)
    with pytest.raises(debiasing.errors.InputError):
        stein.RegressionSteinFunction(instance, sf.pen, sf.direction)


def test_registry():
    init.log("stein ~ Testing the registry")
    for name in stein.REGISTRY:
        sf = stein.make_stein_function(name, 20)
        assert sf.n == 20
        assert sf(np.zeros(20)).shape == (20,)
    with pytest.raises(debiasing.errors.InputError, match="available"):
        stein.make_stein_function("quartic", 5)
    with pytest.raises(debiasing.errors.InputError):
        stein.make_stein_function("constant", 0)


@init.slow
def test_registry_identities():
    init.log("stein ~ Testing the Stein identities of every registered function")
    for name in ("constant", "linear-symmetric", "linear-asymmetric", "soft-threshold"):
        check = stein.second_order_stein_check(stein.make_stein_function(name, 50), reps=100000, seed=7)
        assert abs(check.z_score) < 4, name
        assert abs(check.mean_xi) < 4 * check.mean_xi_se, name

    sf = stein.regression_function(n=100, p=50, s=10, seed=7)
    check = stein.second_order_stein_check(sf, reps=100000, seed=8)
    assert abs(check.z_score) < 4
    assert abs(check.mean_xi) < 4 * check.mean_xi_se


@init.slow
def test_regression_variance_estimator():
    init.log("stein ~ Testing the variance estimator on the regression adapter")
    sf = stein.regression_function(n=100, p=50, s=10, seed=9)
    generator = debiasing.utils.rng.generator(10)
    values, estimates = [], []
    for _ in range(2000):
        z = generator.standard_normal(100)
        terms = sf.terms(z)
        values.append(float(z @ terms.value) - terms.divergence)
        estimates.append(float(terms.value @ terms.value) + terms.trace_sq)
    values, estimates = np.asarray(values), np.asarray(estimates)
    variance = np.var(values, ddof=1)
    # the standard error of a sample variance is about Var·√(2/(m − 1)) for near-normal samples
    se = variance * np.sqrt(2 / (values.shape[0] - 1)) + np.std(estimates, ddof=1) / np.sqrt(values.shape[0])
    assert abs(np.mean(estimates) - variance) <= 5 * se

import io

import numpy as np
import pytest

import debiasing
from debiasing.utils import linalg, rng

from . import init


def test_logging():
    init.log("utils ~ Testing logging")

    def test():
        return debiasing.utils.logging.caller_name() == "tests.test_utils.test_logging"
    assert test()

    colors = debiasing.utils.logging.Colors()
    for color, code in [
        ('normal', '\033[0m'),
        ('grey', '\033[90m'),
        ('red', '\033[91m'),
        ('yellow', '\033[93m'),
        ('cyan', '\033[96m')
    ]:
        assert colors[color] == code

    assert debiasing.utils.logging.LogLevels.DEBUG.debug
    assert not debiasing.utils.logging.LogLevels.INFO.debug
    assert not debiasing.utils.logging.LogLevels.WARNING.debug
    assert not debiasing.utils.logging.LogLevels.ERROR.debug

    stream = io.StringIO()
    debiasing.utils.logging.log("hello", debiasing.utils.logging.LogLevels.WARNING, step="tests", file=stream)
    line = stream.getvalue()
    assert "[WARNING] (Debiasing) [tests] hello" in line
    assert "\033[" not in line


def test_warn():
    init.log("utils ~ Testing warn")
    with pytest.warns(debiasing.errors.NormBoundWarning):
        debiasing.utils.logging.warn("bound exceeded", debiasing.errors.NormBoundWarning, step="tests")


def test_errors():
    init.log("utils ~ Testing the error messages")
    assert debiasing.errors.error_message("Failed") == "Failed"
    assert debiasing.errors.error_message("Failed", reason="why") == "Failed (why)"
    assert debiasing.errors.error_message("Failed", reason="why", message="more") == "Failed (why)\nWarning: more"
    assert str(debiasing.errors.ConfigError("unknown key", line=3)) == "line 3: unknown key"
    assert issubclass(debiasing.errors.ConfigError, debiasing.errors.InputError)
    assert issubclass(debiasing.errors.InputError, ValueError)
    assert issubclass(debiasing.errors.NotConverged, debiasing.errors.NumericalError)


def test_rng():
    init.log("utils ~ Testing rng")
    assert isinstance(rng.generator(0).bit_generator, np.random.Philox)
    assert np.array_equal(rng.generator(3).standard_normal(5), rng.generator(3).standard_normal(5))
    generator = rng.generator(1)
    assert rng.generator(generator) is generator

    first = rng.child_generator(10, 4).standard_normal(3)
    assert np.array_equal(first, rng.child_generator(10, 4).standard_normal(3))
    assert not np.array_equal(first, rng.child_generator(10, 5).standard_normal(3))
    assert not np.array_equal(first, rng.child_generator(11, 4).standard_normal(3))


def test_linalg():
    init.log("utils ~ Testing linalg")
    matrix = np.array([[4.0, 1.0], [1.0, 3.0]])
    assert linalg.is_symmetric(matrix)
    assert not linalg.is_symmetric(np.array([[1.0, 2.0], [0.0, 1.0]]))

    factor = linalg.cholesky(matrix)
    assert np.allclose(factor @ factor.T, matrix)
    with pytest.raises(debiasing.errors.NotPositiveDefinite):
        linalg.cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))

    solver = linalg.SPDSolver(matrix)
    rhs = np.array([1.0, 2.0])
    assert np.allclose(matrix @ solver.solve(rhs), rhs)
    half = solver.half_solve(rhs)
    assert half @ half == pytest.approx(rhs @ np.linalg.solve(matrix, rhs))
    with pytest.raises(debiasing.errors.DegenerateActiveSet):
        linalg.SPDSolver(np.array([[1.0, 1.0], [1.0, 1.0]]), error=debiasing.errors.DegenerateActiveSet)
    assert linalg.SPDSolver(np.zeros((0, 0))).solve(np.zeros(0)).shape == (0,)

    assert linalg.operator_norm(matrix) == pytest.approx(np.max(np.linalg.eigvalsh(matrix)))
    assert linalg.operator_norm(np.array([[0.0, 2.0], [0.0, 0.0]])) == pytest.approx(2.0)

    probes = linalg.rademacher_probes(6, 4, rng.generator(0))
    assert probes.shape == (6, 4)
    assert set(np.unique(probes)) <= {-1.0, 1.0}
    # exact on diagonal matrices, every Rademacher entry squares to one
    diagonal = np.diag(np.arange(1.0, 7.0))
    assert linalg.hutchinson_frobenius_sq(diagonal @ probes) == pytest.approx(91.0)
    dense = rng.generator(1).standard_normal((6, 6))
    estimate = linalg.hutchinson_frobenius_sq(dense @ linalg.rademacher_probes(6, 4000, rng.generator(2)))
    assert estimate == pytest.approx(np.sum(dense * dense), rel=0.1)


def test_slow_gate(monkeypatch):
    init.log("utils ~ Testing the full size gate")
    calls = []

    @init.slow
    def full_size():
        calls.append(True)

    monkeypatch.setattr(init, "SLOW", False)
    with pytest.raises(pytest.skip.Exception):
        full_size()
    assert calls == []
    monkeypatch.setattr(init, "SLOW", True)
    full_size()
    assert calls == [True]

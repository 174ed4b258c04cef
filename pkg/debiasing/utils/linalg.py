"""
linalg.py

Dense linear algebra helpers: Cholesky factorizations, solves and trace estimates.

Inverses are never formed explicitly, every solve goes through a factorization.
"""

import typing

import numpy as np
import scipy.linalg

from debiasing import errors

RCOND_LIMIT = 1e-12
"""Below this reciprocal condition estimate a system is declared singular"""


def is_symmetric(matrix: np.ndarray, rtol: float = 1e-12) -> bool:
    """
    Checks if `matrix` is symmetric to within `rtol` relative to its largest entry
    """
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        return False
    scale = max(float(np.max(np.abs(matrix))), 1e-300)
    return float(np.max(np.abs(matrix - matrix.T))) <= rtol * scale


def cholesky(matrix: np.ndarray, what: str = "matrix") -> np.ndarray:
    """
    Returns the lower Cholesky factor L with matrix = L Lᵀ

    No jitter is added: a failure is reported, not repaired.

    Raises
    ------
    NotPositiveDefinite
        If the factorization fails.
    """
    try:
        factor = scipy.linalg.cholesky(matrix, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as err:
        raise errors.NotPositiveDefinite(errors.error_message("The {} is not positive definite".format(what),
                                                              reason="Cholesky factorization failed")) from err
    return factor


class SPDSolver():
    """
    A Cholesky factorization of a symmetric positive definite matrix, reused for several solves
    """

    def __init__(self, matrix: np.ndarray, what: str = "matrix", error: typing.Type[errors.NumericalError] = errors.NotPositiveDefinite) -> None:
        """
        Parameters
        ----------
        matrix: np.ndarray
            The symmetric positive definite matrix
        what: str
            Name used in error messages
        error: type, default=NotPositiveDefinite
            The exception raised when the matrix is singular or not positive definite
        """
        self.matrix = np.asarray(matrix, dtype=float)
        self.size = self.matrix.shape[0]
        if self.size == 0:
            self.factor = np.zeros((0, 0))
            return
        try:
            self.factor, _ = scipy.linalg.cho_factor(self.matrix, lower=True, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as err:
            raise error(errors.error_message("The {} is singular".format(what), reason="Cholesky factorization failed")) from err
        diagonal = np.abs(np.diag(self.factor))
        # (min/max of diag L)² is a cheap reciprocal condition estimate
        if (diagonal.min() / diagonal.max()) ** 2 < RCOND_LIMIT:
            raise error(errors.error_message("The {} is singular".format(what),
                                             reason="reciprocal condition estimate below {:g}".format(RCOND_LIMIT)))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Returns matrix⁻¹ rhs"""
        rhs = np.asarray(rhs, dtype=float)
        if self.size == 0:
            return np.zeros_like(rhs)
        return scipy.linalg.cho_solve((self.factor, True), rhs)

    def half_solve(self, rhs: np.ndarray) -> np.ndarray:
        """Returns L⁻¹ rhs, so that ‖L⁻¹ v‖² = vᵀ matrix⁻¹ v"""
        rhs = np.asarray(rhs, dtype=float)
        if self.size == 0:
            return np.zeros_like(rhs)
        return scipy.linalg.solve_triangular(self.factor, rhs, lower=True)

    def __repr__(self) -> str:
        return "SPDSolver(size={})".format(self.size)


def operator_norm(matrix: np.ndarray) -> float:
    """Largest singular value (largest eigenvalue for a symmetric PSD matrix)"""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.size == 0:
        return 0.0
    if is_symmetric(matrix, rtol=1e-10):
        return float(np.max(np.abs(scipy.linalg.eigvalsh(matrix))))
    return float(scipy.linalg.svdvals(matrix)[0])


def rademacher_probes(size: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Returns a size×count matrix of independent ±1 entries"""
    return rng.choice(np.array([-1.0, 1.0]), size=(size, count))


def hutchinson_frobenius_sq(image: np.ndarray) -> float:
    """
    Girard-Hutchinson estimate of ‖A‖_F² = tr(AᵀA) from the image A V of
    Rademacher probes V (one probe per column)
    """
    image = np.asarray(image, dtype=float)
    return float(np.sum(image * image) / image.shape[1])

"""
model.py

The Gaussian design linear model y = Xβ + ε: covariances, instances, directions
of interest and the decomposition X = XQ₀ + z₀a₀ᵀ.
"""

import pathlib
import typing

import numpy as np
import pandas

from debiasing import errors
from debiasing.utils import linalg, rng

PathType = typing.Union[str, pathlib.Path]

CovarianceKind = typing.Literal["figure1", "figure2_wishart"]


def _as_vector(value: typing.Any, name: str) -> np.ndarray:
    vector = np.asarray(value, dtype=float)
    if vector.ndim != 1:
        vector = vector.reshape(-1)
    if not np.all(np.isfinite(vector)):
        raise errors.InputError(errors.error_message("Invalid input", reason="{} contains NaN or Inf".format(name)))
    return vector


def _as_matrix(value: typing.Any, name: str) -> np.ndarray:
    matrix = np.asarray(value, dtype=float)
    if matrix.ndim == 1:
        matrix = matrix.reshape(-1, 1)
    if matrix.ndim != 2:
        raise errors.InputError(errors.error_message("Invalid input", reason="{} should be a matrix".format(name)))
    if not np.all(np.isfinite(matrix)):
        raise errors.InputError(errors.error_message("Invalid input", reason="{} contains NaN or Inf".format(name)))
    return matrix


def _read_csv(path: PathType) -> pandas.DataFrame:
    try:
        return pandas.read_csv(path)
    except (pandas.errors.ParserError, pandas.errors.EmptyDataError, UnicodeDecodeError) as err:
        raise errors.InputError(errors.error_message("Invalid CSV file", reason=str(path), message=str(err))) from err


def _numeric(frame: typing.Union[pandas.DataFrame, pandas.Series], path: PathType) -> np.ndarray:
    """The values of a CSV file as floats"""
    try:
        return frame.to_numpy(dtype=float)
    except (ValueError, TypeError) as err:
        raise errors.InputError(errors.error_message("Non-numeric value in CSV file", reason=str(path), message=str(err))) from err


class CovarianceSpec():
    """
    A known design covariance Σ, stored with its Cholesky factor
    """

    def __init__(self, sigma_matrix: typing.Any) -> None:
        """
        Parameters
        ----------
        sigma_matrix: array-like
            A symmetric positive definite p×p matrix

        Raises
        ------
        InputError
            If the matrix is not square or not symmetric to within 1e-12
        NotPositiveDefinite
            If the Cholesky factorization fails
        """
        matrix = _as_matrix(sigma_matrix, "Σ")
        if matrix.shape[0] != matrix.shape[1] or matrix.shape[0] < 1:
            raise errors.InputError(errors.error_message("Invalid covariance", reason="Σ should be a non-empty square matrix"))
        if not linalg.is_symmetric(matrix, rtol=1e-12):
            raise errors.InputError(errors.error_message("Invalid covariance", reason="Σ is not symmetric"))
        self.matrix = (matrix + matrix.T) / 2
        self.matrix.setflags(write=False)
        self.cholesky = linalg.cholesky(self.matrix, what="covariance matrix Σ")
        """The lower Cholesky factor L with Σ = L Lᵀ"""
        self.cholesky.setflags(write=False)
        self._solver = linalg.SPDSolver(self.matrix, what="covariance matrix Σ")

    @property
    def p(self) -> int:
        """The dimension"""
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, p: int) -> "CovarianceSpec":
        return cls(np.eye(int(p)))

    @classmethod
    def from_precision(cls, precision: typing.Any) -> "CovarianceSpec":
        """Builds Σ from Σ⁻¹ (inverted through its own Cholesky factorization)"""
        solver = linalg.SPDSolver(_as_matrix(precision, "Σ⁻¹"), what="precision matrix Σ⁻¹")
        inverse = solver.solve(np.eye(solver.size))
        return cls((inverse + inverse.T) / 2)

    @classmethod
    def from_csv(cls, path: PathType) -> "CovarianceSpec":
        """Reads Σ from a CSV file with a header row"""
        return cls(_numeric(_read_csv(path), path))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Returns Σ⁻¹ rhs"""
        return self._solver.solve(rhs)

    def inverse_sqrt_norm(self, vector: np.ndarray) -> float:
        """Returns ‖Σ^{-1/2} v‖ = (vᵀΣ⁻¹v)^{1/2}"""
        return float(np.linalg.norm(self._solver.half_solve(vector)))

    def sqrt_norm_sq(self, vector: np.ndarray) -> float:
        """Returns ‖Σ^{1/2} v‖² = vᵀΣv"""
        vector = np.asarray(vector, dtype=float)
        return float(vector @ self.matrix @ vector)

    def operator_norm(self) -> float:
        return linalg.operator_norm(self.matrix)

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {"sigma_matrix": self.matrix.tolist()}

    def __eq__(self, other: object) -> bool:
        return isinstance(other, CovarianceSpec) and np.array_equal(self.matrix, other.matrix)

    def __repr__(self) -> str:
        return "CovarianceSpec(p={})".format(self.p)


class Truth():
    """The ground truth of a simulated instance"""

    def __init__(self, beta: typing.Any, sigma: float, cov: CovarianceSpec) -> None:
        self.beta = _as_vector(beta, "β")
        self.beta.setflags(write=False)
        self.sigma = float(sigma)
        if not self.sigma > 0:
            raise errors.InputError(errors.error_message("Invalid truth", reason="the noise level σ should be positive"))
        self.cov = cov
        if self.cov.p != self.beta.shape[0]:
            raise errors.InputError(errors.error_message("Invalid truth", reason="β and Σ have inconsistent dimensions"))

    def __repr__(self) -> str:
        return "Truth(p={}, sigma={})".format(self.beta.shape[0], self.sigma)


class RegressionInstance():
    """
    The observed data (y, X) and, for simulations, the truth (β, σ, Σ)
    """

    def __init__(self, y: typing.Any, X: typing.Any, truth: Truth = None) -> None:
        """
        Parameters
        ----------
        y: array-like
            The response, an n-vector
        X: array-like
            The design, an n×p matrix
        truth: Truth, default=None
            The ground truth when known

        Raises
        ------
        InputError
            On NaN/Inf values or inconsistent dimensions ("invalid input")
        """
        self.y = _as_vector(y, "y")
        self.X = _as_matrix(X, "X")
        if self.X.shape[0] != self.y.shape[0] or self.y.shape[0] < 1 or self.X.shape[1] < 1:
            raise errors.InputError(errors.error_message("Invalid input",
                                                         reason="y has {} entries but X is {}×{}".format(self.y.shape[0], *self.X.shape)))
        if truth is not None and truth.beta.shape[0] != self.X.shape[1]:
            raise errors.InputError(errors.error_message("Invalid input", reason="β and X have inconsistent dimensions"))
        self.y.setflags(write=False)
        self.X.setflags(write=False)
        self.truth = truth

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def cov(self) -> typing.Optional[CovarianceSpec]:
        return self.truth.cov if self.truth is not None else None

    @property
    def noise(self) -> np.ndarray:
        """ε = y − Xβ (needs the truth)"""
        if self.truth is None:
            raise errors.InputError(errors.error_message("The noise is unknown", reason="no truth attached to the instance"))
        return self.y - self.X @ self.truth.beta

    def with_response(self, y: typing.Any) -> "RegressionInstance":
        """A copy with another response, keeping X and the truth"""
        return RegressionInstance(y, self.X, truth=self.truth)

    def with_design(self, X: typing.Any, y: typing.Any) -> "RegressionInstance":
        """A copy with another design and response, keeping the truth"""
        return RegressionInstance(y, X, truth=self.truth)

    @classmethod
    def from_csv(cls, x_path: PathType, y_path: PathType) -> "RegressionInstance":
        """
        Reads an instance from CSV files

        Parameters
        ----------
        x_path: str | pathlib.Path
            CSV with a header row "x1,...,xp"
        y_path: str | pathlib.Path
            CSV with a column "y" (or a single column)
        """
        design = _read_csv(x_path)
        expected = ["x{}".format(j + 1) for j in range(design.shape[1])]
        if list(design.columns) != expected:
            raise errors.InputError(errors.error_message("Invalid design file", reason="columns should be labelled x1..x{}".format(design.shape[1])))
        response = _read_csv(y_path)
        if "y" in response.columns:
            y = response["y"]
        elif response.shape[1] == 1:
            y = response.iloc[:, 0]
        else:
            raise errors.InputError(errors.error_message("Invalid response file", reason="no 'y' column"))
        return cls(_numeric(y, y_path), _numeric(design, x_path))

    def __repr__(self) -> str:
        return "RegressionInstance(n={}, p={}, truth={})".format(self.n, self.p, self.truth is not None)


class Direction():
    """
    A normalized direction of interest a₀ with u₀ = Σ⁻¹a₀/⟨a₀,Σ⁻¹a₀⟩ and z₀ = Xu₀
    """

    def __init__(self, a0: np.ndarray, u0: np.ndarray, z0: np.ndarray) -> None:
        self.a0 = np.asarray(a0, dtype=float)
        self.u0 = np.asarray(u0, dtype=float)
        self.z0 = np.asarray(z0, dtype=float)
        for vector in (self.a0, self.u0, self.z0):
            vector.setflags(write=False)

    def theta(self, beta: np.ndarray) -> float:
        """θ = ⟨a₀, β⟩"""
        return float(self.a0 @ beta)

    def rebind(self, X: np.ndarray) -> "Direction":
        """The same (a₀, u₀) attached to another design"""
        return Direction(self.a0, self.u0, np.asarray(X, dtype=float) @ self.u0)

    def __repr__(self) -> str:
        return "Direction(p={}, n={})".format(self.a0.shape[0], self.z0.shape[0])


def sample_design(cov: CovarianceSpec, n: int, seed: rng.SeedType = None) -> np.ndarray:
    """
    Draws an n×p design with iid N(0, Σ) rows

    The rows are G Lᵀ for G with iid standard normal entries and L the Cholesky
    factor of Σ; equal seeds give bit-identical matrices.

    Parameters
    ----------
    cov: CovarianceSpec
    n: int
        The number of rows
    seed: int | Generator, default=None
    """
    n = int(n)
    if n < 1:
        raise errors.InputError(errors.error_message("Invalid sample size", reason="n should be at least 1"))
    gaussian = rng.generator(seed).standard_normal((n, cov.p))
    return gaussian @ cov.cholesky.T


def sample_instance(cov: CovarianceSpec, beta: typing.Any, sigma: float, n: int, seed: rng.SeedType = None) -> RegressionInstance:
    """
    Draws (X, ε) and returns the instance y = Xβ + ε with its truth attached

    The design is drawn before the noise from the same stream.
    """
    generator = rng.generator(seed)
    truth = Truth(beta, sigma, cov)
    X = sample_design(cov, n, generator)
    noise = truth.sigma * generator.standard_normal(int(n))
    return RegressionInstance(X @ truth.beta + noise, X, truth=truth)


def normalize_direction(a: typing.Any, cov: CovarianceSpec, X: typing.Any) -> Direction:
    """
    Normalizes a direction so that ‖Σ^{-1/2}a₀‖ = 1 and builds u₀ and z₀

    The result does not depend on positive rescalings of `a`.

    Raises
    ------
    InputError
        If `a` is zero ("zero direction") or has the wrong dimension
    """
    a = _as_vector(a, "a")
    if a.shape[0] != cov.p:
        raise errors.InputError(errors.error_message("Invalid direction", reason="a has {} entries, expected {}".format(a.shape[0], cov.p)))
    if not np.any(a):
        raise errors.InputError(errors.error_message("Invalid direction", reason="zero direction"))
    a0 = a / cov.inverse_sqrt_norm(a)
    precision_a0 = cov.solve(a0)
    u0 = precision_a0 / float(a0 @ precision_a0)
    X = _as_matrix(X, "X")
    return Direction(a0, u0, X @ u0)


def decompose_design(X: typing.Any, direction: Direction) -> typing.Tuple[np.ndarray, np.ndarray]:
    """
    Splits X = XQ₀ + z₀a₀ᵀ with Q₀ = I − u₀a₀ᵀ

    Returns
    -------
    tuple[np.ndarray, np.ndarray]
        z₀ and XQ₀
    """
    X = _as_matrix(X, "X")
    z0 = X @ direction.u0
    return z0, X - np.outer(z0, direction.a0)


def compose_design(XQ0: np.ndarray, z0: np.ndarray, direction: Direction) -> np.ndarray:
    """The inverse of `decompose_design`: XQ₀ + z₀a₀ᵀ"""
    return XQ0 + np.outer(z0, direction.a0)


def figure1_covariance(s: int, signs: typing.Any) -> CovarianceSpec:
    """
    Σ with Σ⁻¹ = I + 0.9 s^{-1/2} (e₁vᵀ + ve₁ᵀ)

    Parameters
    ----------
    s: int
        The sparsity, s ≥ 1
    signs: array-like
        The sign vector v with entries in {-1, 0, 1}
    """
    s = int(s)
    signs = _as_vector(signs, "sign vector")
    if s < 1:
        raise errors.InputError(errors.error_message("Invalid covariance", reason="s should be at least 1"))
    if not np.all(np.isin(signs, (-1.0, 0.0, 1.0))):
        raise errors.InputError(errors.error_message("Invalid covariance", reason="sign entries should be in {-1, 0, 1}"))
    basis = np.zeros_like(signs)
    basis[0] = 1.0
    precision = np.eye(signs.shape[0]) + 0.9 / np.sqrt(s) * (np.outer(basis, signs) + np.outer(signs, basis))
    return CovarianceSpec.from_precision(precision)


def figure1_signs(beta: typing.Any) -> np.ndarray:
    """sgn(β) with the first coordinate set to 0 (the coupling of e₁ with the rest of the support)"""
    signs = np.sign(_as_vector(beta, "β"))
    signs[0] = 0.0
    return signs


def figure2_wishart_covariance(p: int, dof: int = None, scale: float = None, seed: rng.SeedType = None) -> CovarianceSpec:
    """
    Σ = W / scale with W = GᵀG, G a dof×p standard normal matrix

    Parameters
    ----------
    p: int
    dof: int, default=5p
        The Wishart degrees of freedom, at least p
    scale: float, default=5p
    seed: int | Generator, default=None
    """
    p = int(p)
    dof = 5 * p if dof is None else int(dof)
    scale = 5.0 * p if scale is None else float(scale)
    if dof < p:
        raise errors.InputError(errors.error_message("Invalid covariance", reason="the Wishart degrees of freedom should be at least p"))
    gaussian = rng.generator(seed).standard_normal((dof, p))
    wishart = gaussian.T @ gaussian
    return CovarianceSpec((wishart + wishart.T) / (2 * scale))


def figure_covariances(kind: CovarianceKind, **kwargs) -> CovarianceSpec:
    """
    The covariance matrices of the two reference experiments

    >>> figure_covariances("figure1", s=200, signs=signs)
    >>> figure_covariances("figure2_wishart", p=900, dof=4500, seed=0)
    """
    if kind == "figure1":
        return figure1_covariance(**kwargs)
    if kind == "figure2_wishart":
        return figure2_wishart_covariance(**kwargs)
    raise errors.InputError(errors.error_message("Unknown covariance kind", reason=str(kind)))


def random_sphere_directions(cov: CovarianceSpec, count: int, seed: rng.SeedType = None) -> np.ndarray:
    """
    Directions Σ^{1/2}v for v uniform on the unit sphere, one per row

    With the symmetric square root, ‖Σ^{-1/2}a‖ = 1 for every returned a.
    """
    generator = rng.generator(seed)
    gaussian = generator.standard_normal((int(count), cov.p))
    sphere = gaussian / np.linalg.norm(gaussian, axis=1, keepdims=True)
    eigenvalues, eigenvectors = np.linalg.eigh(cov.matrix)
    root = (eigenvectors * np.sqrt(eigenvalues)) @ eigenvectors.T
    return sphere @ root

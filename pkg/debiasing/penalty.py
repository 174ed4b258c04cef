"""
penalty.py

The convex penalties g(b) regularizing the least-squares loss ‖y − Xb‖²/(2n).

|--------------|-----------------------------------|------------------------------
| Kind         | g(b)                              | Parameters
|--------------|-----------------------------------|------------------------------
| lasso        | λ‖b‖₁                             | λ > 0
| group_lasso  | Σₖ λₖ‖b_{Gₖ}‖                     | a partition {Gₖ}, λₖ > 0
| ridge        | (μ/2)‖b‖²                         | μ > 0
| elastic_net  | λ‖b‖₁ + (μ/2)‖b‖²                 | λ > 0, μ > 0
| smooth       | any twice differentiable convex g | callables, μ ≥ 0
|--------------|-----------------------------------|------------------------------
"""

import typing

import numpy as np

from debiasing import errors
from debiasing.utils import rng

PenaltyKind = typing.Literal["lasso", "group_lasso", "ridge", "elastic_net", "smooth"]


class Kinds:
    """The penalty kinds"""
    LASSO: PenaltyKind = "lasso"
    GROUP_LASSO: PenaltyKind = "group_lasso"
    RIDGE: PenaltyKind = "ridge"
    ELASTIC_NET: PenaltyKind = "elastic_net"
    SMOOTH: PenaltyKind = "smooth"


NAMED_SMOOTH = ("least_squares", "log_cosh")
"""The smooth penalties `make_penalty` can rebuild by name"""


def _positive(value: typing.Any, name: str, allow_zero: bool = False) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError) as err:
        raise errors.InputError(errors.error_message("Invalid penalty", reason="{} should be a number".format(name))) from err
    if not np.isfinite(value) or value < 0 or (value == 0 and not allow_zero):
        raise errors.InputError(errors.error_message("Invalid penalty",
                                                     reason="{} should be {}".format(name, "nonnegative" if allow_zero else "strictly positive")))
    return value


def soft_threshold(values: np.ndarray, threshold: typing.Union[float, np.ndarray]) -> np.ndarray:
    """sign(v)·max(|v| − t, 0), coordinatewise"""
    values = np.asarray(values, dtype=float)
    return np.sign(values) * np.maximum(np.abs(values) - threshold, 0.0)


def group_shrink(values: np.ndarray, threshold: float) -> np.ndarray:
    """max(1 − t/‖v‖, 0)·v, the proximal map of t‖·‖"""
    values = np.asarray(values, dtype=float)
    norm = float(np.linalg.norm(values))
    if norm <= threshold:
        return np.zeros_like(values)
    return (1.0 - threshold / norm) * values


class Penalty():
    """
    A convex penalty g

    Subclasses implement `value`, `prox` and `to_dict`.
    """
    kind: PenaltyKind = None

    @property
    def strong_convexity(self) -> float:
        """The modulus μ ≥ 0 such that g − (μ/2)‖·‖² is convex"""
        return 0.0

    @property
    def tuning(self) -> float:
        """The main tuning parameter (λ for the ℓ₁-type penalties, μ for ridge)"""
        raise errors.InputError(errors.error_message("This penalty has no tuning parameter", reason=self.kind))

    def with_tuning(self, value: float) -> "Penalty":
        """A copy with another main tuning parameter"""
        raise errors.InputError(errors.error_message("This penalty has no tuning parameter", reason=self.kind))

    def value(self, b: np.ndarray) -> float:
        """Returns g(b)"""
        raise NotImplementedError("This method should be implemented by the child class")

    def prox(self, v: np.ndarray, step: float) -> np.ndarray:
        """Returns argmin_b ‖b − v‖²/2 + step·g(b)"""
        raise NotImplementedError("This method should be implemented by the child class")

    def hessian(self, b: np.ndarray) -> np.ndarray:
        """The p×p Hessian of the twice differentiable part of g"""
        b = np.asarray(b, dtype=float)
        return self.strong_convexity * np.eye(b.shape[0])

    def check_dimension(self, p: int) -> None:
        """Raises an InputError if the penalty cannot act on p coordinates"""

    @property
    def label(self) -> str:
        parameters = ", ".join("{}={:g}".format(key, value) for key, value in self.to_dict().items()
                               if key != "kind" and isinstance(value, (int, float)))
        return "{}({})".format(self.kind, parameters)

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        raise NotImplementedError("This method should be implemented by the child class")

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Penalty) and self.kind == other.kind and self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        return "Penalty({})".format(self.label)


class Lasso(Penalty):
    kind = Kinds.LASSO

    def __init__(self, lam: float) -> None:
        self.lam = _positive(lam, "λ")

    @property
    def tuning(self) -> float:
        return self.lam

    def with_tuning(self, value: float) -> "Lasso":
        return Lasso(value)

    def value(self, b: np.ndarray) -> float:
        return self.lam * float(np.sum(np.abs(b)))

    def prox(self, v: np.ndarray, step: float) -> np.ndarray:
        return soft_threshold(v, step * self.lam)

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {"kind": self.kind, "lambda": self.lam}


class GroupLasso(Penalty):
    kind = Kinds.GROUP_LASSO

    def __init__(self, groups: typing.Sequence[typing.Sequence[int]], lambdas: typing.Union[float, typing.Sequence[float]]) -> None:
        """
        Parameters
        ----------
        groups: list[list[int]]
            A partition of {0, ..., p-1}, zero-based
        lambdas: float | list[float]
            One weight for every group, or a common one
        """
        self.groups = [np.asarray(group, dtype=int) for group in groups]
        if not self.groups or any(group.ndim != 1 or group.shape[0] == 0 for group in self.groups):
            raise errors.InputError(errors.error_message("Invalid penalty", reason="groups should be non-empty lists of indices"))
        covered = np.sort(np.concatenate(self.groups))
        if not np.array_equal(covered, np.arange(covered.shape[0])):
            raise errors.InputError(errors.error_message("Invalid penalty", reason="groups should partition the coordinates without overlap"))
        if np.ndim(lambdas) == 0:
            lambdas = [lambdas] * len(self.groups)
        if len(lambdas) != len(self.groups):
            raise errors.InputError(errors.error_message("Invalid penalty", reason="one λ per group is needed"))
        self.lambdas = np.array([_positive(lam, "λ") for lam in lambdas])

    @classmethod
    def contiguous(cls, p: int, size: int, lam: float) -> "GroupLasso":
        """Groups {0..size-1}, {size..2·size-1}, ... sharing the weight λ"""
        if int(p) % int(size) != 0:
            raise errors.InputError(errors.error_message("Invalid penalty", reason="the group size should divide p"))
        return cls([list(range(start, start + int(size))) for start in range(0, int(p), int(size))], lam)

    @property
    def p(self) -> int:
        return int(sum(group.shape[0] for group in self.groups))

    @property
    def tuning(self) -> float:
        return float(self.lambdas.max())

    def with_tuning(self, value: float) -> "GroupLasso":
        return GroupLasso(self.groups, self.lambdas * (_positive(value, "λ") / self.tuning))

    def check_dimension(self, p: int) -> None:
        if self.p != int(p):
            raise errors.InputError(errors.error_message("Invalid penalty", reason="the groups cover {} coordinates, expected {}".format(self.p, p)))

    def value(self, b: np.ndarray) -> float:
        b = np.asarray(b, dtype=float)
        return float(sum(lam * np.linalg.norm(b[group]) for group, lam in zip(self.groups, self.lambdas)))

    def prox(self, v: np.ndarray, step: float) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        result = np.empty_like(v)
        for group, lam in zip(self.groups, self.lambdas):
            result[group] = group_shrink(v[group], step * lam)
        return result

    @property
    def label(self) -> str:
        return "group_lasso(groups={}, lambda={:g})".format(len(self.groups), self.tuning)

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        lambdas = self.lambdas.tolist()
        return {
            "kind": self.kind,
            "groups": [group.tolist() for group in self.groups],
            "lambda": lambdas[0] if len(set(lambdas)) == 1 else lambdas
        }


class Ridge(Penalty):
    kind = Kinds.RIDGE

    def __init__(self, mu: float) -> None:
        self.mu = _positive(mu, "μ")

    @property
    def strong_convexity(self) -> float:
        return self.mu

    @property
    def tuning(self) -> float:
        return self.mu

    def with_tuning(self, value: float) -> "Ridge":
        return Ridge(value)

    def value(self, b: np.ndarray) -> float:
        return 0.5 * self.mu * float(np.sum(np.square(b)))

    def prox(self, v: np.ndarray, step: float) -> np.ndarray:
        return np.asarray(v, dtype=float) / (1.0 + step * self.mu)

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {"kind": self.kind, "mu": self.mu}


class ElasticNet(Penalty):
    kind = Kinds.ELASTIC_NET

    def __init__(self, lam: float, mu: float) -> None:
        self.lam = _positive(lam, "λ")
        self.mu = _positive(mu, "μ")

    @property
    def strong_convexity(self) -> float:
        return self.mu

    @property
    def tuning(self) -> float:
        return self.lam

    def with_tuning(self, value: float) -> "ElasticNet":
        return ElasticNet(value, self.mu)

    def value(self, b: np.ndarray) -> float:
        b = np.asarray(b, dtype=float)
        return self.lam * float(np.sum(np.abs(b))) + 0.5 * self.mu * float(np.sum(np.square(b)))

    def prox(self, v: np.ndarray, step: float) -> np.ndarray:
        return soft_threshold(v, step * self.lam) / (1.0 + step * self.mu)

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {"kind": self.kind, "lambda": self.lam, "mu": self.mu}


class Smooth(Penalty):
    """
    A twice differentiable convex penalty given by its value, gradient and Hessian

    The Hessian callable may return a p×p matrix or the p-vector of its diagonal.
    """
    kind = Kinds.SMOOTH

    def __init__(self,
                 value_fn: typing.Callable[[np.ndarray], float],
                 gradient_fn: typing.Callable[[np.ndarray], np.ndarray],
                 hessian_fn: typing.Callable[[np.ndarray], np.ndarray],
                 strong_convexity_mu: float = 0.0,
                 name: str = "smooth",
                 parameters: typing.Mapping[str, float] = None) -> None:
        self.value_fn = value_fn
        self.gradient_fn = gradient_fn
        self.hessian_fn = hessian_fn
        self.mu = _positive(strong_convexity_mu, "μ", allow_zero=True)
        self.name = str(name)
        self.parameters = dict(parameters or {})
        """The arguments of the named constructors besides μ, emitted by `to_dict`"""

    @classmethod
    def least_squares(cls) -> "Smooth":
        """g = 0, the unpenalized least-squares estimator"""
        return cls(lambda b: 0.0, np.zeros_like, lambda b: np.zeros(np.shape(b)), 0.0, name="least_squares")

    @classmethod
    def log_cosh(cls, lam: float, mu: float = 0.0, scale: float = 1.0) -> "Smooth":
        """
        g(b) = λ·Σ s·log cosh(bⱼ/s) + (μ/2)‖b‖², a smooth surrogate of λ‖b‖₁
        """
        lam, mu, scale = _positive(lam, "λ"), _positive(mu, "μ", allow_zero=True), _positive(scale, "scale")

        def value(b):
            b = np.asarray(b, dtype=float)
            return float(lam * scale * np.sum(np.logaddexp(b / scale, -b / scale) - np.log(2.0)) + 0.5 * mu * np.sum(b * b))

        def gradient(b):
            b = np.asarray(b, dtype=float)
            return lam * np.tanh(b / scale) + mu * b

        def hessian(b):
            b = np.asarray(b, dtype=float)
            return lam / scale / np.cosh(b / scale) ** 2 + mu

        return cls(value, gradient, hessian, mu, name="log_cosh", parameters={"lambda": lam, "scale": scale})

    @property
    def strong_convexity(self) -> float:
        return self.mu

    def value(self, b: np.ndarray) -> float:
        return float(self.value_fn(np.asarray(b, dtype=float)))

    def gradient(self, b: np.ndarray) -> np.ndarray:
        return np.asarray(self.gradient_fn(np.asarray(b, dtype=float)), dtype=float)

    def hessian(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        hessian = np.asarray(self.hessian_fn(b), dtype=float)
        if hessian.ndim == 1:
            return np.diag(hessian)
        return hessian

    def prox(self, v: np.ndarray, step: float) -> np.ndarray:
        """Solved by Newton's method (the proximal objective is strongly convex)"""
        v = np.asarray(v, dtype=float)
        b = v.copy()
        for _ in range(100):
            gradient = b - v + step * self.gradient(b)
            if np.max(np.abs(gradient), initial=0.0) <= 1e-13 * max(1.0, float(np.max(np.abs(v), initial=0.0))):
                break
            b = b - np.linalg.solve(np.eye(b.shape[0]) + step * self.hessian(b), gradient)
        return b

    def check_derivatives(self, p: int, seed: rng.SeedType = 0, rtol: float = 1e-4) -> None:
        """
        Compares the gradient and the Hessian with central differences at a random point

        Raises
        ------
        InputError
            If the callables disagree beyond `rtol` (relative)
        """
        point = rng.generator(seed).standard_normal(int(p))
        step = 1e-5
        basis = np.eye(int(p))
        numeric_gradient = np.array([(self.value(point + step * e) - self.value(point - step * e)) / (2 * step) for e in basis])
        numeric_hessian = np.array([(self.gradient(point + step * e) - self.gradient(point - step * e)) / (2 * step) for e in basis]).T
        for name, numeric, analytic in (("gradient", numeric_gradient, self.gradient(point)),
                                        ("hessian", numeric_hessian, self.hessian(point))):
            if np.shape(analytic) != np.shape(numeric):
                raise errors.InputError(errors.error_message("Inconsistent smooth penalty", reason="the {} has shape {}".format(name, np.shape(analytic))))
            scale = max(1.0, float(np.max(np.abs(numeric), initial=0.0)))
            if float(np.max(np.abs(numeric - analytic), initial=0.0)) > rtol * scale:
                raise errors.InputError(errors.error_message("Inconsistent smooth penalty",
                                                             reason="the {} disagrees with finite differences".format(name)))

    @property
    def label(self) -> str:
        arguments = ", ".join("{}={:g}".format(key, value) for key, value in sorted({**self.parameters, "mu": self.mu}.items()))
        return "{}({})".format(self.name, arguments)

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {"kind": self.kind, "name": self.name, "mu": self.mu, **self.parameters}

    def __eq__(self, other: object) -> bool:
        # user defined callables only equal themselves
        if self.name not in NAMED_SMOOTH:
            return self is other
        return isinstance(other, Smooth) and self.to_dict() == other.to_dict()


def penalty_value(pen: Penalty, b: typing.Any) -> float:
    """
    Returns g(b)

    >>> penalty_value(Lasso(2), [1, -3])
    8.0
    """
    b = np.asarray(b, dtype=float)
    pen.check_dimension(b.shape[0])
    return pen.value(b)


def make_penalty(kind: PenaltyKind, **parameters) -> Penalty:
    """
    Builds a penalty from its kind and parameters

    Parameters
    ----------
    kind: str
        lasso, group_lasso, ridge, elastic_net or least_squares
    **parameters
        "lambda" (or "lam"), "mu", "groups" (zero-based index lists)
    """
    lam = parameters.get("lambda", parameters.get("lam"))
    mu = parameters.get("mu")

    def required(value, name):
        if value is None:
            raise errors.InputError(errors.error_message("Invalid penalty", reason="'{}' is required for {}".format(name, kind)))
        return value

    if kind == Kinds.LASSO:
        return Lasso(required(lam, "lambda"))
    if kind == Kinds.GROUP_LASSO:
        return GroupLasso(required(parameters.get("groups"), "groups"), required(lam, "lambda"))
    if kind == Kinds.RIDGE:
        return Ridge(required(mu, "mu"))
    if kind == Kinds.ELASTIC_NET:
        return ElasticNet(required(lam, "lambda"), required(mu, "mu"))
    if kind == "least_squares":
        return Smooth.least_squares()
    if kind == "log_cosh":
        return Smooth.log_cosh(required(lam, "lambda"), mu or 0.0, parameters.get("scale", 1.0))
    raise errors.InputError(errors.error_message("Unknown penalty", reason=str(kind)))


def from_dict(data: typing.Mapping[str, typing.Any]) -> Penalty:
    """The inverse of `Penalty.to_dict` (user defined smooth penalties excepted)"""
    data = dict(data)
    kind = data.pop("kind", None)
    if kind == Kinds.SMOOTH:
        return make_penalty(data.get("name"), **data)
    return make_penalty(kind, **data)

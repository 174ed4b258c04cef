"""
config.py

Manages the experiment configurations.

An experiment is a YAML document with four sections:

    model:        n, p, the noise level, β and Σ
    penalties:    the penalty grid
    directions:   the directions of interest
    mc:           replications, seed, confidence level, solver settings

Unknown keys are errors reported with their line number.
"""

import collections.abc
import pathlib
import typing

import numpy as np
import yaml

from debiasing import errors
from debiasing import penalty as penalties
from debiasing.model import CovarianceSpec, figure1_covariance, figure1_signs, figure2_wishart_covariance, random_sphere_directions
from debiasing.utils import rng

PathType = typing.Union[str, pathlib.Path]

BetaKind = typing.Literal["explicit", "sparse", "grouped"]
CovarianceKind = typing.Literal["identity", "figure1", "figure2_wishart", "explicit"]
DirectionKind = typing.Literal["canonical", "explicit", "random_sphere"]


class Configuration():
    """
    This object represents part of an experiment configuration file
    """

    KEYS: typing.Dict[str, typing.Any] = {}
    """The accepted keys, mapped to the schema of their value (a Configuration class, a list of one or None)"""
    REQUIRED: typing.Tuple[str, ...] = ()

    def loads(self, data: typing.Union[str, typing.Dict[str, typing.Any]], decode: bool = True) -> None:
        """
        Loads the configuration from a YAML string (if decode == True) or a dictionary (if decode == False)

        Parameters
        ----------
        data: str | dict
            The YAML string (or the mapping) to load the configuration from

        Raises
        ------
        ConfigError
            On syntax errors, unknown keys, missing keys and invalid values
        """
        if not decode:
            data = yaml.safe_dump(data, sort_keys=False)
        try:
            node = yaml.compose(data, Loader=yaml.SafeLoader)
        except yaml.YAMLError as err:
            mark = getattr(err, "problem_mark", None)
            raise errors.ConfigError("invalid YAML ({})".format(getattr(err, "problem", err)),
                                     line=mark.line + 1 if mark is not None else None) from err
        if node is None:
            raise errors.ConfigError("empty configuration")
        fields, lines = _fields(node, type(self), "the configuration")
        try:
            self.__init__(**fields)
        except errors.ConfigError as err:
            if err.line is not None:
                raise
            raise errors.ConfigError(str(err), line=lines.get(err.key, _line(node)), key=err.key) from err

    def load(self, file: typing.Union[PathType, typing.TextIO]) -> None:
        """
        Loads the configuration from a file.

        Parameters
        ----------
        file: str, pathlib.Path, typing.TextIO
            The file to load the configuration from.
        """
        if hasattr(file, "read"):
            self.loads(file.read())
            return
        with open(file, "r", encoding="utf-8") as f:
            self.loads(f.read())

    def dumps(self) -> str:
        """
        YAML representation of the Configuration object

        Returns
        -------
        str
            The configuration as a YAML string
        """
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def dump(self, file: typing.Union[PathType, typing.TextIO]) -> None:
        """
        Dumps the configuration to a file.

        Parameters
        ----------
        file: str, pathlib.Path, typing.TextIO
            The file to dump the configuration to.
        """
        if hasattr(file, "write"):
            file.write(self.dumps())
            return
        with open(file, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.dumps())

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        """
        Returns a `dict` representation of the Configuration object

        Returns
        -------
        dict
            The `dict` representation of the Configuration object
        """
        raise NotImplementedError("This method should be implemented by the child class")

    def __eq__(self, other: object) -> bool:
        return type(self) is type(other) and self.to_dict() == other.to_dict()

    def __repr__(self) -> str:
        return "{}({})".format(self.__class__.__name__, self.to_dict())


def _construct(node: yaml.Node) -> typing.Any:
    loader = yaml.SafeLoader("")
    try:
        return loader.construct_document(node)
    finally:
        loader.dispose()


def _line(node: yaml.Node) -> int:
    return node.start_mark.line + 1


def _fields(node: yaml.Node, schema: typing.Type[Configuration], where: str) -> typing.Tuple[typing.Dict[str, typing.Any], typing.Dict[str, int]]:
    """
    Checks a mapping node against the keys of `schema`

    Returns
    -------
    tuple[dict, dict]
        The validated values and the line of every key
    """
    if not isinstance(node, yaml.MappingNode):
        raise errors.ConfigError("{} should be a mapping".format(where), line=_line(node))
    result, lines = {}, {}
    for key_node, value_node in node.value:
        key = _construct(key_node)
        if key not in schema.KEYS:
            raise errors.ConfigError("unknown key '{}' in {}".format(key, where), line=_line(key_node), key=str(key))
        if key in result:
            raise errors.ConfigError("duplicate key '{}' in {}".format(key, where), line=_line(key_node), key=str(key))
        result[key] = _validate(value_node, schema.KEYS[key], "'{}'".format(key))
        lines[key] = _line(key_node)
    for key in schema.REQUIRED:
        if key not in result:
            raise errors.ConfigError("missing required key '{}' in {}".format(key, where), line=_line(node), key=key)
    return result, lines


def _validate(node: yaml.Node, schema: typing.Any, where: str) -> typing.Any:
    """Checks `node` against `schema` and returns the constructed Python value"""
    if isinstance(schema, list):
        if not isinstance(node, yaml.SequenceNode):
            raise errors.ConfigError("{} should be a list".format(where), line=_line(node))
        return [_validate(item, schema[0], "{}[{}]".format(where, index)) for index, item in enumerate(node.value)]
    if isinstance(schema, type) and issubclass(schema, Configuration):
        result, lines = _fields(node, schema, where)
        try:
            return schema(**result)
        except errors.ConfigError as err:
            if err.line is not None:
                raise
            raise errors.ConfigError(str(err), line=lines.get(err.key, _line(node)), key=err.key) from err
    return _construct(node)


def _section(value: typing.Any, section: typing.Type["Configuration"], default: typing.Callable[[], typing.Any] = None) -> typing.Any:
    """Builds a section from a mapping, section objects are kept as they are"""
    if isinstance(value, collections.abc.Mapping):
        return section(**value)
    if value is None:
        return default() if default is not None else section()
    return value


def _integer(value: typing.Any, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)) or value < minimum:
        raise errors.ConfigError("'{}' should be an integer ≥ {}".format(name, minimum), key=name)
    return int(value)


def _number(value: typing.Any, name: str, positive: bool = True) -> float:
    if isinstance(value, str):
        # YAML 1.1 reads "1e-10" (no dot) as a string
        try:
            value = float(value)
        except ValueError:
            pass
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not np.isfinite(value) or (positive and value <= 0):
        raise errors.ConfigError("'{}' should be a {}number".format(name, "positive " if positive else ""), key=name)
    return float(value)


def _numbers(value: typing.Any, name: str, positive: bool = True) -> typing.List[float]:
    if not isinstance(value, list) or not value:
        raise errors.ConfigError("'{}' should be a non-empty list of numbers".format(name), key=name)
    return [_number(item, name, positive=positive) for item in value]


class BetaConfig(Configuration):
    """
    The regression vector

    explicit: values
    sparse:   the first s coordinates equal `value` (random signs when asked),
              the first one replaced by `leading` when given
    grouped:  the first `active_groups` groups of size `group_size` equal `value`
    """
    KEYS = {"kind": None, "values": None, "s": None, "value": None, "leading": None, "random_signs": None,
            "sign_seed": None, "group_size": None, "active_groups": None}
    REQUIRED = ("kind",)

    def __init__(self, kind: BetaKind = "sparse", values: typing.List[float] = None, s: int = None, value: float = 1.0,
                 leading: float = None, random_signs: bool = False, sign_seed: int = 0,
                 group_size: int = None, active_groups: int = None) -> None:
        if kind not in ("explicit", "sparse", "grouped"):
            raise errors.ConfigError("unknown β kind '{}'".format(kind), key="kind")
        self.kind = kind
        self.values = _numbers(values, "values", positive=False) if kind == "explicit" else None
        self.s = _integer(s, "s", minimum=0) if kind == "sparse" else None
        self.value = _number(value, "value", positive=False)
        self.leading = None if leading is None else _number(leading, "leading", positive=False)
        self.random_signs = bool(random_signs)
        self.sign_seed = _integer(sign_seed, "sign_seed", minimum=0)
        self.group_size = _integer(group_size, "group_size") if kind == "grouped" else None
        self.active_groups = _integer(active_groups, "active_groups", minimum=0) if kind == "grouped" else None

    def vector(self, p: int) -> np.ndarray:
        """β as a p-vector"""
        if self.kind == "explicit":
            if len(self.values) != p:
                raise errors.ConfigError("'values' has {} entries, expected p = {}".format(len(self.values), p), key="values")
            return np.array(self.values)
        beta = np.zeros(p)
        if self.kind == "sparse":
            if self.s > p:
                raise errors.ConfigError("s = {} exceeds p = {}".format(self.s, p), key="s")
            signs = np.ones(self.s)
            if self.random_signs:
                signs = rng.generator(self.sign_seed).choice(np.array([-1.0, 1.0]), size=self.s)
            beta[:self.s] = self.value * signs
            if self.leading is not None and self.s > 0:
                beta[0] = self.leading
            return beta
        active = self.group_size * self.active_groups
        if active > p or p % self.group_size != 0:
            raise errors.ConfigError("the groups do not fit in p = {}".format(p), key="group_size")
        beta[:active] = self.value
        return beta

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        result = {"kind": self.kind}
        if self.kind == "explicit":
            result["values"] = self.values
        elif self.kind == "sparse":
            result.update({"s": self.s, "value": self.value, "random_signs": self.random_signs, "sign_seed": self.sign_seed})
            if self.leading is not None:
                result["leading"] = self.leading
        else:
            result.update({"group_size": self.group_size, "active_groups": self.active_groups, "value": self.value})
        return result


class CovarianceConfig(Configuration):
    """
    The design covariance

    identity, figure1 (built from the signs of β), figure2_wishart (dof, scale,
    seed), explicit (a matrix or the path of a CSV file)
    """
    KEYS = {"kind": None, "dof": None, "scale": None, "seed": None, "matrix": None, "path": None}
    REQUIRED = ("kind",)

    def __init__(self, kind: CovarianceKind = "identity", dof: int = None, scale: float = None, seed: int = 0,
                 matrix: typing.List[typing.List[float]] = None, path: str = None) -> None:
        if kind not in ("identity", "figure1", "figure2_wishart", "explicit"):
            raise errors.ConfigError("unknown covariance kind '{}'".format(kind), key="kind")
        self.kind = kind
        self.dof = None if dof is None else _integer(dof, "dof")
        self.scale = None if scale is None else _number(scale, "scale")
        self.seed = _integer(seed, "seed", minimum=0)
        self.matrix = matrix
        self.path = None if path is None else str(path)
        if kind == "explicit" and (matrix is None) == (path is None):
            raise errors.ConfigError("an explicit covariance needs exactly one of 'matrix' and 'path'", key="matrix")

    def build(self, p: int, beta: np.ndarray) -> CovarianceSpec:
        if self.kind == "identity":
            return CovarianceSpec.identity(p)
        if self.kind == "figure1":
            return figure1_covariance(int(np.count_nonzero(beta)), figure1_signs(beta))
        if self.kind == "figure2_wishart":
            return figure2_wishart_covariance(p, dof=self.dof, scale=self.scale, seed=self.seed)
        cov = CovarianceSpec(self.matrix) if self.matrix is not None else CovarianceSpec.from_csv(self.path)
        if cov.p != p:
            raise errors.ConfigError("the covariance is {0}×{0}, expected p = {1}".format(cov.p, p), key="matrix")
        return cov

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        result = {"kind": self.kind}
        if self.kind == "figure2_wishart":
            result["seed"] = self.seed
            if self.dof is not None:
                result["dof"] = self.dof
            if self.scale is not None:
                result["scale"] = self.scale
        elif self.kind == "explicit":
            result.update({"matrix": self.matrix} if self.matrix is not None else {"path": self.path})
        return result


class ModelConfig(Configuration):
    KEYS = {"n": None, "p": None, "sigma": None, "sigma_sq": None, "beta": BetaConfig, "covariance": CovarianceConfig}
    REQUIRED = ("n", "p", "beta")

    def __init__(self, n: int = 100, p: int = 50, sigma: float = None, sigma_sq: float = None,
                 beta: typing.Union[BetaConfig, typing.Dict[str, typing.Any]] = None,
                 covariance: typing.Union[CovarianceConfig, typing.Dict[str, typing.Any]] = None) -> None:
        """
        Parameters
        ----------
        n: int
        p: int
        sigma: float, default=1
            The noise standard deviation (exclusive with `sigma_sq`)
        sigma_sq: float
            The noise variance
        beta: BetaConfig | dict
        covariance: CovarianceConfig | dict, default=identity
        """
        self.n = _integer(n, "n")
        self.p = _integer(p, "p")
        if sigma is not None and sigma_sq is not None:
            raise errors.ConfigError("'sigma' and 'sigma_sq' are exclusive", key="sigma")
        self.sigma_sq = _number(sigma_sq, "sigma_sq") if sigma_sq is not None else None
        self.sigma = float(np.sqrt(self.sigma_sq)) if self.sigma_sq is not None else _number(1.0 if sigma is None else sigma, "sigma")
        self.beta = _section(beta, BetaConfig, default=lambda: BetaConfig(kind="sparse", s=min(self.p, 1)))
        self.covariance = _section(covariance, CovarianceConfig)

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        result = {"n": self.n, "p": self.p}
        if self.sigma_sq is not None:
            result["sigma_sq"] = self.sigma_sq
        else:
            result["sigma"] = self.sigma
        result.update({"beta": self.beta.to_dict(), "covariance": self.covariance.to_dict()})
        return result


class PenaltyConfig(Configuration):
    """
    One entry of the penalty grid, expanded over `lambdas` (or `mus` for ridge)

    Groups are either contiguous blocks of `group_size` or explicit one-based
    index lists in `groups`.
    """
    KEYS = {"kind": None, "lambda": None, "lambdas": None, "mu": None, "mus": None, "group_size": None, "groups": None}
    REQUIRED = ("kind",)

    def __init__(self, kind: str = "lasso", mu: float = None, mus: typing.List[float] = None, group_size: int = None,
                 groups: typing.List[typing.List[int]] = None, **tuning) -> None:
        if kind not in ("lasso", "group_lasso", "ridge", "elastic_net"):
            raise errors.ConfigError("unknown penalty kind '{}'".format(kind), key="kind")
        self.kind = kind
        lam, lambdas = tuning.pop("lambda", None), tuning.pop("lambdas", None)
        if tuning:
            raise errors.ConfigError("unknown key '{}' in the penalty".format(next(iter(tuning))), key=next(iter(tuning)))
        if kind == "ridge":
            if (mu is None) == (mus is None):
                raise errors.ConfigError("ridge needs exactly one of 'mu' and 'mus'", key="mu")
            self.values = [_number(mu, "mu")] if mu is not None else _numbers(mus, "mus")
            self.mu = None
        else:
            if (lam is None) == (lambdas is None):
                raise errors.ConfigError("{} needs exactly one of 'lambda' and 'lambdas'".format(kind), key="lambda")
            self.values = [_number(lam, "lambda")] if lam is not None else _numbers(lambdas, "lambdas")
            self.mu = _number(mu, "mu") if kind == "elastic_net" else None
            if kind == "elastic_net" and mu is None:
                raise errors.ConfigError("elastic_net needs 'mu'", key="mu")
        self.group_size = None if group_size is None else _integer(group_size, "group_size")
        self.groups = groups
        if kind == "group_lasso" and (group_size is None) == (groups is None):
            raise errors.ConfigError("group_lasso needs exactly one of 'group_size' and 'groups'", key="group_size")

    def build(self, p: int) -> typing.List[penalties.Penalty]:
        """The penalties of this entry, in the configured order"""
        try:
            if self.kind == "ridge":
                return [penalties.Ridge(mu) for mu in self.values]
            if self.kind == "lasso":
                return [penalties.Lasso(lam) for lam in self.values]
            if self.kind == "elastic_net":
                return [penalties.ElasticNet(lam, self.mu) for lam in self.values]
            if self.groups is not None:
                groups = [[int(j) - 1 for j in group] for group in self.groups]
                result = [penalties.GroupLasso(groups, lam) for lam in self.values]
            else:
                result = [penalties.GroupLasso.contiguous(p, self.group_size, lam) for lam in self.values]
            for pen in result:
                pen.check_dimension(p)
            return result
        except errors.InputError as err:
            raise errors.ConfigError(str(err), key=self.kind) from err

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        result = {"kind": self.kind}
        result["mus" if self.kind == "ridge" else "lambdas"] = list(self.values)
        if self.mu is not None:
            result["mu"] = self.mu
        if self.group_size is not None:
            result["group_size"] = self.group_size
        if self.groups is not None:
            result["groups"] = self.groups
        return result


class DirectionConfig(Configuration):
    """
    canonical: e_index (one-based)
    explicit:  values
    random_sphere: `count` directions Σ^{1/2}v, v uniform on the sphere
    """
    KEYS = {"kind": None, "index": None, "values": None, "count": None, "seed": None}
    REQUIRED = ("kind",)

    def __init__(self, kind: DirectionKind = "canonical", index: int = 1, values: typing.List[float] = None,
                 count: int = 1, seed: int = 0) -> None:
        if kind not in ("canonical", "explicit", "random_sphere"):
            raise errors.ConfigError("unknown direction kind '{}'".format(kind), key="kind")
        self.kind = kind
        self.index = _integer(index, "index")
        self.values = _numbers(values, "values", positive=False) if kind == "explicit" else None
        self.count = _integer(count, "count")
        self.seed = _integer(seed, "seed", minimum=0)

    def vectors(self, cov: CovarianceSpec) -> typing.List[np.ndarray]:
        if self.kind == "canonical":
            if self.index > cov.p:
                raise errors.ConfigError("direction index {} exceeds p = {}".format(self.index, cov.p), key="index")
            return [np.eye(cov.p)[self.index - 1]]
        if self.kind == "explicit":
            if len(self.values) != cov.p:
                raise errors.ConfigError("the direction has {} entries, expected p = {}".format(len(self.values), cov.p), key="values")
            return [np.array(self.values)]
        return list(random_sphere_directions(cov, self.count, seed=self.seed))

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        if self.kind == "canonical":
            return {"kind": self.kind, "index": self.index}
        if self.kind == "explicit":
            return {"kind": self.kind, "values": self.values}
        return {"kind": self.kind, "count": self.count, "seed": self.seed}


class MonteCarloConfig(Configuration):
    KEYS = {"reps": None, "seed": None, "alpha": None, "v0": None, "tol": None, "max_iter": None, "kappa": None}
    REQUIRED = ("reps",)

    def __init__(self, reps: int = 100, seed: int = 0, alpha: float = 0.05, v0: str = "vhat",
                 tol: float = 1e-10, max_iter: int = 100000, kappa: float = 1.0) -> None:
        self.reps = _integer(reps, "reps")
        self.seed = _integer(seed, "seed", minimum=0)
        self.alpha = _number(alpha, "alpha")
        if not self.alpha < 1:
            raise errors.ConfigError("'alpha' should be in (0, 1)", key="alpha")
        if v0 not in ("resid", "vhat", "vcheck", "vstar"):
            raise errors.ConfigError("'v0' should be one of resid, vhat, vcheck, vstar", key="v0")
        self.v0 = v0
        self.tol = _number(tol, "tol")
        self.max_iter = _integer(max_iter, "max_iter")
        self.kappa = _number(kappa, "kappa")

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {"reps": self.reps, "seed": self.seed, "alpha": self.alpha, "v0": self.v0,
                "tol": self.tol, "max_iter": self.max_iter, "kappa": self.kappa}


class ExperimentConfig(Configuration):
    """
    A complete Monte Carlo experiment
    """
    KEYS = {"model": ModelConfig, "penalties": [PenaltyConfig], "directions": [DirectionConfig], "mc": MonteCarloConfig}
    REQUIRED = ("model", "penalties", "directions", "mc")

    def __init__(self, model: typing.Union[ModelConfig, dict] = None, penalties: typing.List[typing.Union[PenaltyConfig, dict]] = None,
                 directions: typing.List[typing.Union[DirectionConfig, dict]] = None, mc: typing.Union[MonteCarloConfig, dict] = None) -> None:
        self.model = _section(model, ModelConfig)
        self.penalties = [_section(entry, PenaltyConfig) for entry in (penalties or [{"kind": "lasso", "lambda": 0.1}])]
        self.directions = [_section(entry, DirectionConfig) for entry in (directions or [{"kind": "canonical"}])]
        self.mc = _section(mc, MonteCarloConfig)
        if not self.penalties or not self.directions:
            raise errors.ConfigError("the penalty grid and the directions should not be empty")

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def p(self) -> int:
        return self.model.p

    @property
    def sigma(self) -> float:
        return self.model.sigma

    def beta(self) -> np.ndarray:
        return self.model.beta.vector(self.model.p)

    def covariance(self, beta: np.ndarray = None) -> CovarianceSpec:
        return self.model.covariance.build(self.model.p, self.beta() if beta is None else beta)

    def penalty_grid(self) -> typing.List[penalties.Penalty]:
        """Every penalty of the grid, in the configured order"""
        return [pen for entry in self.penalties for pen in entry.build(self.model.p)]

    def direction_vectors(self, cov: CovarianceSpec) -> typing.List[np.ndarray]:
        return [vector for entry in self.directions for vector in entry.vectors(cov)]

    def to_dict(self) -> typing.Dict[str, typing.Any]:
        return {
            "model": self.model.to_dict(),
            "penalties": [entry.to_dict() for entry in self.penalties],
            "directions": [entry.to_dict() for entry in self.directions],
            "mc": self.mc.to_dict()
        }


def parse_config(path: typing.Union[PathType, typing.TextIO]) -> ExperimentConfig:
    """
    Reads an experiment configuration

    Raises
    ------
    ConfigError
        With the line number when available
    """
    if not hasattr(path, "read") and not pathlib.Path(path).is_file():
        raise errors.ConfigError("no configuration file at {}".format(path))
    config = ExperimentConfig()
    config.load(path)
    return config


SHIPPED = pathlib.Path(__file__).parent / "configs"
"""The directory of the shipped configurations"""


def shipped_config(name: str) -> ExperimentConfig:
    """Loads a shipped configuration by name (figure1, figure2, coverage, unbiased)"""
    return parse_config(SHIPPED / "{}.yaml".format(name))

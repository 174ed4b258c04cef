"""
Debiasing
De-biased inference for convex-regularized least squares in Gaussian designs.

> Effective degrees of freedom, de-biasing corrections, variance estimates and
> confidence intervals for the Lasso, the group Lasso, ridge and friends.
"""

__author__ = 'Debiasing developers'
__copyright__ = 'Copyright 2026, debiasing'
__credits__ = ['debiasing developers']
__license__ = 'MIT License'
__version_tuple__ = (1, 0, '(beta)')


def __version_string__():
    if isinstance(__version_tuple__[-1], str):
        return '.'.join(map(str, __version_tuple__[:-1])) + __version_tuple__[-1]
    return '.'.join(str(i) for i in __version_tuple__)


__version__ = 'debiasing v{version}'.format(version=__version_string__())
__status__ = 'Beta'


from . import errors, utils
from .model import (CovarianceSpec, Direction, RegressionInstance, Truth, figure_covariances, normalize_direction,
                    sample_design, sample_instance)
from .penalty import ElasticNet, GroupLasso, Lasso, Penalty, Ridge, Smooth, make_penalty, penalty_value
from .fit import FitResult, KKTReport, fit, kkt_report
from .debias import DebiasReport, HatOperator, debias_report, df, grad_f_z0, hat_H, w0
from .inference import ConfidenceInterval, VarianceEstimates, ci_narrow, ci_quadratic, ci_spike, confidence_intervals, pivot, variance_estimates
from .stein import SteinFunction, approximation_report, make_stein_function, second_order_stein_check
from .config import ExperimentConfig, parse_config, shipped_config
from .sim import ExperimentResult, oracle_beta_star, run_experiment

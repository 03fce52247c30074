"""Sensitivity of estimates to dropping a small fraction of the data."""

from .amip import amip_path, amis, apip, brute_force_mip, decompose, gamma_bound, refit_lower_bound
from .certify import certify_qoi, certify_theta, compute_constants
from .dataset import ModelSpec, RegressionProblem, build_problem, dataset_from_arrays, load_csv
from .errors import AmipError, NumericalError, UsageError
from .influence import (custom_qoi, dtheta_dw, influence_scores, linear_qoi, make_qoi,
                        parameter_qoi)
from .sandwich import SandwichOptions, noise_sigma, sandwich_covariance
from .zestim import ZEstimatorSpec, fit, fit_iv, fit_ols, solve_zestimator

__version__ = "0.1.0"

__all__ = [
    "amip_path",
    "amis",
    "apip",
    "brute_force_mip",
    "decompose",
    "gamma_bound",
    "refit_lower_bound",
    "certify_qoi",
    "certify_theta",
    "compute_constants",
    "ModelSpec",
    "RegressionProblem",
    "build_problem",
    "dataset_from_arrays",
    "load_csv",
    "AmipError",
    "NumericalError",
    "UsageError",
    "custom_qoi",
    "dtheta_dw",
    "influence_scores",
    "linear_qoi",
    "make_qoi",
    "parameter_qoi",
    "SandwichOptions",
    "noise_sigma",
    "sandwich_covariance",
    "ZEstimatorSpec",
    "fit",
    "fit_iv",
    "fit_ols",
    "solve_zestimator",
]

"""Matérn Gaussian-process likelihoods, fitting and prediction on planar data.

The Vecchia approximation keeps estimation and kriging at O(n m^3) cost;
dense and block-composite likelihoods are available for comparison.
"""

__version__ = "0.1.0"

from .model import Dataset, MaternParams, MeanSpec, cov_matrix, matern_cov
from .geoindex import (
    build_kdtree,
    decluster_weights,
    maxmin_order,
    neighbor_sets,
    voronoi_partition,
    weighted_subsample,
)
from .likelihood import bcl_loglik, exact_loglik, loglik_gradient, vecchia_loglik
from .fit import FitConfig, fit_model, initial_params, wald_summary
from .predict import cond_sim, local_gaussian_predict, local_krige_predict, vecchia_predict
from .uq import BootstrapConfig, bootstrap_ci, sn_interval
from .simulate import PatternSpec, empirical_variogram, generate_pattern, simulate_gp
from .evalbench import kfold_split, run_benchmark, score

__all__ = [
    "Dataset",
    "MaternParams",
    "MeanSpec",
    "cov_matrix",
    "matern_cov",
    "build_kdtree",
    "decluster_weights",
    "maxmin_order",
    "neighbor_sets",
    "voronoi_partition",
    "weighted_subsample",
    "bcl_loglik",
    "exact_loglik",
    "loglik_gradient",
    "vecchia_loglik",
    "FitConfig",
    "fit_model",
    "initial_params",
    "wald_summary",
    "cond_sim",
    "local_gaussian_predict",
    "local_krige_predict",
    "vecchia_predict",
    "BootstrapConfig",
    "bootstrap_ci",
    "sn_interval",
    "PatternSpec",
    "empirical_variogram",
    "generate_pattern",
    "simulate_gp",
    "kfold_split",
    "run_benchmark",
    "score",
]

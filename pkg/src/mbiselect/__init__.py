"""Variable selection for multi-source data with block-wise missingness.

The pipeline: detect missing-pattern groups, fit pooled conditional
expectations and materialize one imputed view per (group, donor), stack
per-group estimating functions with block-diagonal weights, reduce
near-singular weight blocks to principal components, and minimize the
SCAD-penalized quadratic form by nonlinear conjugate gradient, tuning
the penalty with a BIC-type score.
"""

from .diagnostics import GapReport, efficiency_gap, empirical_covariance
from .errors import MbiError
from .estimating import EstimatingSystem, build_system, moment_vector, weight_block
from .imputation import ImputationSet, build_views, fit_conditional
from .optimizer import FitResult, PenaltySpec, fit, minimize_cg, scad, scad_prime
from .patterns import (DataSet, PatternIndex, detect_patterns, make_dataset,
                       read_csv_dataset, validate_for_fit)
from .reduction import build_reduction, select_pc_count, split_moments
from .simulation import SettingSpec, make_setting, metrics, run_setting
from .tuning import PathResult, mbi_bic, rss, run_path

__all__ = [
    "DataSet", "PatternIndex", "detect_patterns", "make_dataset",
    "read_csv_dataset", "validate_for_fit",
    "ImputationSet", "build_views", "fit_conditional",
    "EstimatingSystem", "build_system", "moment_vector", "weight_block",
    "build_reduction", "select_pc_count", "split_moments",
    "FitResult", "PenaltySpec", "fit", "minimize_cg", "scad", "scad_prime",
    "PathResult", "mbi_bic", "rss", "run_path",
    "GapReport", "efficiency_gap", "empirical_covariance",
    "SettingSpec", "make_setting", "metrics", "run_setting",
    "MbiError",
]

__version__ = "0.1.0"

from .engine import ExperimentEngine, bench_degrees, build_model, compare_filters, holdout_rmse
from .utils import (
    linear_fit_r2,
    median_seconds,
    relative_deviation,
    rmse,
    symmetry_drift
)

__all__ = [
    'ExperimentEngine',
    'bench_degrees',
    'build_model',
    'compare_filters',
    'holdout_rmse',
    'linear_fit_r2',
    'median_seconds',
    'relative_deviation',
    'rmse',
    'symmetry_drift'
]

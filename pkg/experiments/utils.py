from typing import Dict, Sequence
import numpy as np
import pandas as pd

def rmse(estimate: np.ndarray, reference: np.ndarray) -> float:
    """Root mean square error between two equally shaped arrays

    Args:
        estimate: Simulated or estimated values
        reference: Reference values

    Returns:
        float: RMSE over all entries
    """
    estimate = np.asarray(estimate, dtype=float)
    reference = np.asarray(reference, dtype=float)
    if estimate.shape != reference.shape:
        raise ValueError(f"Shape mismatch: {estimate.shape} vs {reference.shape}")
    return float(np.sqrt(np.mean((estimate - reference) ** 2)))

def relative_deviation(estimate: np.ndarray, reference: np.ndarray) -> float:
    """||estimate - reference||_F / ||reference||_F, absolute when the reference is zero"""
    estimate = np.asarray(estimate, dtype=float)
    reference = np.asarray(reference, dtype=float)
    diff = np.linalg.norm(estimate - reference)
    scale = np.linalg.norm(reference)
    return float(diff / scale) if scale > 0 else float(diff)

def symmetry_drift(matrices: np.ndarray) -> float:
    """Largest relative asymmetry ||P - P^T|| / ||P|| over a stack of matrices"""
    matrices = np.asarray(matrices, dtype=float)
    if matrices.ndim == 2:
        matrices = matrices[None]
    drifts = [relative_deviation(m, m.T) if np.linalg.norm(m) > 0 else 0.0 for m in matrices]
    return float(max(drifts))

def linear_fit_r2(x: Sequence[float], y: Sequence[float]) -> Dict:
    """Least-squares line through (x, y) and its coefficient of determination

    Returns:
        dict: slope, intercept and r2
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise ValueError("A linear fit needs at least two points")
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    total = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(residual ** 2) / total if total > 0 else 1.0
    return {'slope': float(slope), 'intercept': float(intercept), 'r2': float(r2)}

def median_seconds(times: Sequence[float]) -> float:
    """Median of per-step wall times, NaN when empty"""
    series = pd.Series(times, dtype=float)
    return float(series.median()) if not series.empty else float('nan')

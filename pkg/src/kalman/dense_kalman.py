"""Textbook Kalman filter on dense arrays, one batch column at a time.

Only meant as an oracle for the tensor-train filter, so every call is
checked against the dense size guard.
"""
from typing import Optional, Tuple

import numpy as np

from src.tensor.dense import check_dense_size
from src.utils.errors import DimensionMismatchError


def dense_kalman_step(mean: np.ndarray, cov: np.ndarray, A: Optional[np.ndarray],
                      c: np.ndarray, Q: Optional[np.ndarray], r_diag: np.ndarray,
                      y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """One predict/update cycle for every column of the state

    Args:
        mean: (N, l) state means
        cov: (l, N, N) covariances, one per column
        A: (N, N) transition matrix, None for the identity
        c: (N,) measurement vector
        Q: (l, N, N) process-noise covariances, None for zero
        r_diag: (l,) measurement-noise variances
        y: (l,) measurements

    Returns:
        tuple: (mean, cov) after the update, same shapes as the inputs
    """
    mean = np.asarray(mean, dtype=float)
    if mean.ndim == 1:
        mean = mean[:, None]
    states, l = mean.shape
    check_dense_size([l, states, states], "dense covariance")
    cov = np.asarray(cov, dtype=float).reshape(l, states, states)
    c = np.asarray(c, dtype=float).ravel()
    r_diag = np.broadcast_to(np.asarray(r_diag, dtype=float), (l,))
    y = np.broadcast_to(np.asarray(y, dtype=float), (l,))
    if c.size != states:
        raise DimensionMismatchError(f"Measurement vector has {c.size} entries, state has {states}")

    new_mean = np.empty_like(mean)
    new_cov = np.empty_like(cov)
    for k in range(l):
        m = mean[:, k]
        P = cov[k]
        if A is not None:
            m = A @ m
            P = A @ P @ A.T
        if Q is not None:
            P = P + Q[k]

        v = y[k] - c @ m
        s = c @ P @ c + r_diag[k]
        K = P @ c / s
        new_mean[:, k] = m + K * v
        new_cov[k] = P - s * np.outer(K, K)
    return new_mean, new_cov

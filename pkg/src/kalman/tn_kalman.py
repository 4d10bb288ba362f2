"""Kalman filter whose mean and covariance live in tensor-train form.

The state is an n^d x l matrix X(t); column k is one independent estimate.
Its mean M(t) is a batched ``TensorTrain`` and its covariance P(t), one
n^d x n^d matrix per column, a batched ``TTMatrix``. Every step works on
cores only:

    predict   M+ = A M            P+ = A P A^T + Q
    update    v = y - c^T M+      s = c^T P+ c + R
              K = P+ c / s        M = M+ + K diag(v)
              P = P+ - (K box K) diag(s)

``tt_round`` is applied after every rank-growing operation. The mean is
rounded under ``policy.for_mean()``, everything else under ``policy``.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from src.tensor.dense import DenseTensor, khatri_rao, kronecker
from src.tensor.tensor_train import (
    RoundingPolicy,
    TensorTrain,
    TTMatrix,
    scaled_identity_ttm,
    tt_add,
    tt_round,
    tt_scale_batch,
    zeros_tt,
)
from src.utils.errors import CovarianceError, DimensionMismatchError

logger = logging.getLogger(__name__)

# s_k below this fraction of max(s) is treated as numerically zero
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """State-space model X(t) = A X(t-1) + W, y = c^T X(t) + r

    Attributes:
        A: Unbatched TT-matrix, or None for the identity
        Q: Batched diagonal process-noise covariance, or None for zero
        r_diag: Measurement-noise variance per output
    """
    r_diag: np.ndarray
    A: Optional[TTMatrix] = None
    Q: Optional[TTMatrix] = None

    def __post_init__(self):
        r_diag = np.atleast_1d(np.asarray(self.r_diag, dtype=float)).copy()
        if np.any(~(r_diag > 0)):
            raise ValueError(f"Measurement variances must be positive, got {r_diag.tolist()}")
        r_diag.setflags(write=False)
        object.__setattr__(self, "r_diag", r_diag)
        if self.A is not None and self.A.batch != 1:
            raise DimensionMismatchError(f"A must be unbatched, got batch {self.A.batch}")
        if self.Q is not None and self.Q.batch != r_diag.size:
            raise DimensionMismatchError(
                f"Q has batch {self.Q.batch} but there are {r_diag.size} outputs"
            )

    @property
    def outputs(self) -> int:
        return self.r_diag.size

    @classmethod
    def time_invariant(cls, r_diag, n: int, d: int,
                       process_variance: float = 0.0) -> "ModelSpec":
        """A = I with Q = 0, or Q = q I for a random-walk state"""
        r_diag = np.atleast_1d(np.asarray(r_diag, dtype=float))
        q = None
        if process_variance > 0:
            q = scaled_identity_ttm([process_variance] * r_diag.size, n, d)
        return cls(r_diag=r_diag, A=None, Q=q)


@dataclass(frozen=True, eq=False)
class KalmanState:
    """Mean and covariance of the filter after ``t`` steps"""
    mean: TensorTrain
    cov: TTMatrix
    t: int = 0
    policy: RoundingPolicy = field(default_factory=RoundingPolicy)

    def __post_init__(self):
        if self.mean.batch != self.cov.batch:
            raise DimensionMismatchError(
                f"Mean has batch {self.mean.batch}, covariance has {self.cov.batch}"
            )
        if self.mean.dims != self.cov.row_dims or self.mean.dims != self.cov.col_dims:
            raise DimensionMismatchError(
                f"Mean dims {self.mean.dims} do not match covariance "
                f"{self.cov.row_dims} x {self.cov.col_dims}"
            )


@dataclass(frozen=True, eq=False)
class StepDiagnostics:
    """Quantities produced inside one step, kept for metrics"""
    innovation: np.ndarray
    variance: np.ndarray
    gain_ranks: Tuple[int, ...]


def initial_state(l: int, n: int, d: int, variances, policy: RoundingPolicy) -> KalmanState:
    """Zero mean and P(0) = diag(variances) I, both with unit ranks"""
    variances = np.broadcast_to(np.asarray(variances, dtype=float), (l,))
    return KalmanState(
        mean=zeros_tt(l, n, d),
        cov=scaled_identity_ttm(variances, n, d),
        t=0,
        policy=policy,
    )


def _check_operator(A: TTMatrix, dims: Tuple[int, ...], what: str):
    if A.col_dims != dims:
        raise DimensionMismatchError(f"{what}: A has column dims {A.col_dims}, expected {dims}")


def _check_measurement(c: TensorTrain, dims: Tuple[int, ...]):
    if c.batch != 1:
        raise DimensionMismatchError(f"Measurement TT must be unbatched, got batch {c.batch}")
    if c.dims != dims:
        raise DimensionMismatchError(f"Measurement dims {c.dims} do not match state dims {dims}")


def predict_mean(mean: TensorTrain, A: TTMatrix,
                 policy: Optional[RoundingPolicy]) -> TensorTrain:
    """M+ = A M; core ranks multiply to r_M * r_A before rounding"""
    _check_operator(A, mean.dims, "predict_mean")
    cores = []
    for m, a in zip(mean.cores, A.cores):
        ra, _, rb = m.shape
        rc, n_row, _, rd = a.shape
        core = np.einsum("aib,cjid->acjbd", m, a)
        cores.append(core.reshape(ra * rc, n_row, rb * rd))
    return tt_round(TensorTrain(tuple(cores)), policy)


def predict_cov(cov: TTMatrix, A: Optional[TTMatrix], Q: Optional[TTMatrix],
                policy: Optional[RoundingPolicy]) -> TTMatrix:
    """P+ = A P A^T + Q, contracted core by core

    ``A=None`` skips the contraction and ``Q=None`` skips the addition.
    """
    result = cov
    if A is not None:
        _check_operator(A, cov.row_dims, "predict_cov")
        cores = []
        for p, a in zip(cov.cores, A.cores):
            rp0, _, _, rp1 = p.shape
            ra0, n_row, _, ra1 = a.shape
            core = np.einsum("auwb,cxud,eywf->acexybdf", p, a, a)
            cores.append(core.reshape(rp0 * ra0 * ra0, n_row, n_row, rp1 * ra1 * ra1))
        result = tt_round(TTMatrix(tuple(cores)), policy)
    if Q is not None:
        result = tt_round(tt_add(result, Q), policy)
    return result


def innovation(y: np.ndarray, mean_pred: TensorTrain, c: TensorTrain) -> np.ndarray:
    """v = y - c^T M+, one entry per batch column"""
    _check_measurement(c, mean_pred.dims)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if y.size != mean_pred.batch:
        raise DimensionMismatchError(f"Expected {mean_pred.batch} outputs, got {y.size}")

    chain = None
    for m, ck in zip(mean_pred.cores, c.cores):
        ra, _, rb = m.shape
        rc, _, rd = ck.shape
        block = np.einsum("aib,cid->acbd", m, ck).reshape(ra * rc, rb * rd)
        chain = block if chain is None else chain @ block
    return y - chain[:, 0]


def innovation_variance(cov_pred: TTMatrix, c: TensorTrain, r_diag: np.ndarray) -> np.ndarray:
    """s_k = c^T P+_k c + R_kk

    Raises:
        CovarianceError: Some s_k is non-positive or below
            VARIANCE_FLOOR * max(s), which means the covariance is corrupted
    """
    _check_measurement(c, cov_pred.row_dims)
    r_diag = np.atleast_1d(np.asarray(r_diag, dtype=float))
    if r_diag.size != cov_pred.batch:
        raise DimensionMismatchError(f"Expected {cov_pred.batch} noise variances, got {r_diag.size}")

    chain = None
    for p, ck in zip(cov_pred.cores, c.cores):
        ra, _, _, rb = p.shape
        rc, _, rd = ck.shape
        block = np.einsum("aijb,cie,fjg->acfbeg", p, ck, ck)
        block = block.reshape(ra * rc * rc, rb * rd * rd)
        chain = block if chain is None else chain @ block
    s = chain[:, 0] + r_diag
    _check_variance(s)
    return s


def _check_variance(s: np.ndarray):
    floor = VARIANCE_FLOOR * np.max(s)
    bad = (s <= 0) | (s < floor)
    if np.any(bad):
        logger.warning(
            "Innovation variance out of range",
            extra={"variance": s.tolist(), "floor": float(floor)},
        )
        raise CovarianceError(
            f"Innovation variance {s.tolist()} is non-positive or below {floor:.3e}"
        )


def kalman_gain(cov_pred: TTMatrix, c: TensorTrain, s: np.ndarray,
                policy: Optional[RoundingPolicy]) -> TensorTrain:
    """K_k = P+_k c / s_k; the 1/s scaling only touches the first core"""
    _check_measurement(c, cov_pred.col_dims)
    s = np.atleast_1d(np.asarray(s, dtype=float))
    _check_variance(s)
    cores = []
    for p, ck in zip(cov_pred.cores, c.cores):
        ra, n_row, _, rb = p.shape
        rc, _, rd = ck.shape
        core = np.einsum("aijb,cjd->acibd", p, ck)
        cores.append(core.reshape(ra * rc, n_row, rb * rd))
    gain = tt_scale_batch(TensorTrain(tuple(cores)), 1.0 / s)
    return tt_round(gain, policy)


def update_mean(mean_pred: TensorTrain, K: TensorTrain, v: np.ndarray,
                policy: Optional[RoundingPolicy]) -> TensorTrain:
    """M = M+ + K diag(v)"""
    return tt_round(tt_add(mean_pred, tt_scale_batch(K, v)), policy)


def kk_outer_tn(K: TensorTrain) -> TTMatrix:
    """TT-matrix of the per-column outer products K_k K_k^T

    The first core comes from the Khatri-Rao square of the first core
    unfolded to l x (n r); the others are Kronecker squares of the cores.
    In both, the row index pairs with the fast copy of the rank index.
    """
    first = K.cores[0]
    l, n, r = first.shape
    unfolded = first.reshape((l, n * r), order="F")
    square = khatri_rao(unfolded.T, unfolded.T)
    square = square.reshape((n, r, n, r, l), order="F").transpose(4, 0, 2, 1, 3)
    cores = [square.reshape((l, n, n, r * r), order="F")]

    for core in K.cores[1:]:
        r0, nk, r1 = core.shape
        dense = DenseTensor.from_array(core)
        squared = kronecker(dense, dense).array
        cores.append(squared.reshape((r0 * r0, nk, nk, r1 * r1), order="F"))
    return TTMatrix(tuple(cores))


def update_cov(cov_pred: TTMatrix, K: TensorTrain, s: np.ndarray,
               policy: Optional[RoundingPolicy]) -> TTMatrix:
    """P = P+ - (K box K) diag(s)"""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    correction = tt_scale_batch(kk_outer_tn(K), -s)
    return tt_round(tt_add(cov_pred, correction), policy)


def step_detailed(state: KalmanState, model: ModelSpec, c: TensorTrain,
                  y: np.ndarray) -> Tuple[KalmanState, StepDiagnostics]:
    """One predict/update cycle, also returning v, s and the gain ranks"""
    if model.outputs != state.mean.batch:
        raise DimensionMismatchError(
            f"Model has {model.outputs} outputs, state has batch {state.mean.batch}"
        )
    policy = state.policy
    mean_policy = None if policy is None else policy.for_mean()

    if model.A is None:
        mean_pred = state.mean
    else:
        mean_pred = predict_mean(state.mean, model.A, mean_policy)
    cov_pred = predict_cov(state.cov, model.A, model.Q, policy)

    v = innovation(y, mean_pred, c)
    s = innovation_variance(cov_pred, c, model.r_diag)
    gain = kalman_gain(cov_pred, c, s, policy)
    mean = update_mean(mean_pred, gain, v, mean_policy)
    cov = update_cov(cov_pred, gain, s, policy)

    logger.debug(
        "Step %d ranks: mean %s, cov %s, gain %s",
        state.t + 1, mean.ranks, cov.ranks, gain.ranks,
    )
    new_state = replace(state, mean=mean, cov=cov, t=state.t + 1)
    return new_state, StepDiagnostics(innovation=v, variance=s, gain_ranks=gain.ranks)


def step(state: KalmanState, model: ModelSpec, c: TensorTrain, y: np.ndarray) -> KalmanState:
    """Advance the filter by one measurement"""
    new_state, _ = step_detailed(state, model, c, y)
    return new_state

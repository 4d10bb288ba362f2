"""Tensor trains with an extended (batched) first core.

A ``TensorTrain`` with cores G_1..G_d represents the l x n_1 x ... x n_d tensor

    X[b, i_1, ..., i_d] = G_1[b, i_1, :] G_2[:, i_2, :] ... G_d[:, i_d, 0]

and, read column by column, the n_1...n_d x l matrix whose column b is the
first-index-fastest vectorization of X[b]. ``TTMatrix`` does the same with a
row and a column index on every core, representing l matrices of size
N x M at once. A plain TT/TTm is the l = 1 case.

Cores are stored as ndarrays, (r_{k-1}, n_k, r_k) for trains and
(r_{k-1}, n_k, m_k, r_k) for matrices, with r_0 = l and r_d = 1.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.tensor.dense import DenseTensor, check_dense_size
from src.utils.errors import DimensionMismatchError, RankError, TensorError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RoundingPolicy:
    """Truncation settings for TT rounding

    Attributes:
        tolerance: Relative Frobenius error budget for the whole tensor
        max_rank: Optional hard cap on every TT-rank
        mean_tolerance: Budget for the filter mean; ``tolerance`` when None
        mean_max_rank: Rank cap for the filter mean; ``max_rank`` when None
    """
    tolerance: float = 0.0
    max_rank: Optional[int] = None
    mean_tolerance: Optional[float] = None
    mean_max_rank: Optional[int] = None

    def __post_init__(self):
        if not self.tolerance >= 0:
            raise ValueError(f"Rounding tolerance must be >= 0, got {self.tolerance}")
        if self.max_rank is not None and self.max_rank < 1:
            raise ValueError(f"max_rank must be >= 1 when given, got {self.max_rank}")
        if self.mean_tolerance is not None and not self.mean_tolerance >= 0:
            raise ValueError(f"Mean tolerance must be >= 0, got {self.mean_tolerance}")
        if self.mean_max_rank is not None and self.mean_max_rank < 1:
            raise ValueError(f"mean_max_rank must be >= 1 when given, got {self.mean_max_rank}")

    @property
    def is_exact(self) -> bool:
        return self.tolerance == 0 and self.max_rank is None

    def for_mean(self) -> "RoundingPolicy":
        """Policy applied to the filter mean, the mean_* fields taking precedence"""
        return RoundingPolicy(
            tolerance=self.tolerance if self.mean_tolerance is None else self.mean_tolerance,
            max_rank=self.max_rank if self.mean_max_rank is None else self.mean_max_rank,
        )

    def covers(self, other: "RoundingPolicy") -> bool:
        """True when a train rounded under ``self`` needs no rounding under ``other``

        Holds for a tolerance at least as loose and a cap at most as large.
        """
        if self.tolerance < other.tolerance:
            return False
        if other.max_rank is None:
            return True
        return self.max_rank is not None and self.max_rank <= other.max_rank


def _check_chain(cores: Sequence[np.ndarray], ndim: int, kind: str):
    if not cores:
        raise TensorError(f"{kind} needs at least one core")
    for k, core in enumerate(cores):
        if core.ndim != ndim:
            raise TensorError(f"{kind} core {k + 1} must be {ndim}-way, got shape {core.shape}")
    for k in range(len(cores) - 1):
        if cores[k].shape[-1] != cores[k + 1].shape[0]:
            raise RankError(
                f"{kind} rank mismatch between cores {k + 1} and {k + 2}: "
                f"{cores[k].shape[-1]} != {cores[k + 1].shape[0]}"
            )
    if cores[-1].shape[-1] != 1:
        raise RankError(f"{kind} trailing rank must be 1, got {cores[-1].shape[-1]}")


@dataclass(frozen=True, eq=False)
class TensorTrain:
    """Batched tensor train; the leading mode of the first core is the batch index"""
    cores: Tuple[np.ndarray, ...]
    rounded_at: Optional[RoundingPolicy] = field(default=None, repr=False)

    def __post_init__(self):
        cores = tuple(np.array(core, dtype=float) for core in self.cores)
        _check_chain(cores, 3, "TensorTrain")
        for core in cores:
            core.setflags(write=False)
        object.__setattr__(self, "cores", cores)

    @property
    def order(self) -> int:
        return len(self.cores)

    @property
    def batch(self) -> int:
        return self.cores[0].shape[0]

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(core.shape[1] for core in self.cores)

    @property
    def ranks(self) -> Tuple[int, ...]:
        """Internal ranks r_1..r_{d-1}"""
        return tuple(core.shape[-1] for core in self.cores[:-1])

    def __repr__(self):
        return f"<TensorTrain l={self.batch} dims={self.dims} ranks={self.ranks}>"


@dataclass(frozen=True, eq=False)
class TTMatrix:
    """Batched TT-matrix; core k carries a row index n_k and a column index m_k"""
    cores: Tuple[np.ndarray, ...]
    rounded_at: Optional[RoundingPolicy] = field(default=None, repr=False)

    def __post_init__(self):
        cores = tuple(np.array(core, dtype=float) for core in self.cores)
        _check_chain(cores, 4, "TTMatrix")
        for core in cores:
            core.setflags(write=False)
        object.__setattr__(self, "cores", cores)

    @property
    def order(self) -> int:
        return len(self.cores)

    @property
    def batch(self) -> int:
        return self.cores[0].shape[0]

    @property
    def row_dims(self) -> Tuple[int, ...]:
        return tuple(core.shape[1] for core in self.cores)

    @property
    def col_dims(self) -> Tuple[int, ...]:
        return tuple(core.shape[2] for core in self.cores)

    @property
    def ranks(self) -> Tuple[int, ...]:
        return tuple(core.shape[-1] for core in self.cores[:-1])

    def __repr__(self):
        return (
            f"<TTMatrix l={self.batch} rows={self.row_dims} "
            f"cols={self.col_dims} ranks={self.ranks}>"
        )


AnyTrain = Union[TensorTrain, TTMatrix]


def _flatten_cores(tt: AnyTrain) -> List[np.ndarray]:
    """Three-way views of the cores; TTm row/column indices merge into one mode"""
    if isinstance(tt, TTMatrix):
        return [core.reshape(core.shape[0], core.shape[1] * core.shape[2], core.shape[3])
                for core in tt.cores]
    return [core for core in tt.cores]


def _rebuild(template: AnyTrain, cores: List[np.ndarray],
             rounded_at: Optional[RoundingPolicy] = None) -> AnyTrain:
    if isinstance(template, TTMatrix):
        restored = [
            core.reshape(core.shape[0], rows, cols, core.shape[-1])
            for core, rows, cols in zip(cores, template.row_dims, template.col_dims)
        ]
        return TTMatrix(tuple(restored), rounded_at)
    return TensorTrain(tuple(cores), rounded_at)


def _check_same_structure(a: AnyTrain, b: AnyTrain, what: str):
    if type(a) is not type(b):
        raise DimensionMismatchError(f"{what}: cannot combine {type(a).__name__} with {type(b).__name__}")
    if a.batch != b.batch:
        raise DimensionMismatchError(f"{what}: batch sizes differ ({a.batch} vs {b.batch})")
    if isinstance(a, TTMatrix):
        same = a.row_dims == b.row_dims and a.col_dims == b.col_dims
    else:
        same = a.dims == b.dims
    if not same:
        raise DimensionMismatchError(f"{what}: mode dimensions differ ({a!r} vs {b!r})")


def contract_full(tt: AnyTrain) -> DenseTensor:
    """Contract every core into the dense tensor the train represents

    A TensorTrain gives dims (l, n_1, ..., n_d); a TTMatrix gives (l, N, M)
    with N = n_1...n_d and M = m_1...m_d under the first-index-fastest rule.
    """
    if isinstance(tt, TTMatrix):
        rows = int(np.prod(tt.row_dims))
        cols = int(np.prod(tt.col_dims))
        check_dense_size([tt.batch, rows, cols], "contracted TT-matrix")
        result = tt.cores[0]
        for core in tt.cores[1:]:
            result = np.tensordot(result, core, axes=(-1, 0))
        result = result[..., 0]
        d = tt.order
        # axes are (l, n_1, m_1, ..., n_d, m_d); gather rows then columns
        perm = [0] + [1 + 2 * k for k in range(d)] + [2 + 2 * k for k in range(d)]
        result = result.transpose(perm).reshape((tt.batch, rows, cols), order="F")
        return DenseTensor.from_array(result)

    check_dense_size([tt.batch, *tt.dims], "contracted tensor train")
    result = tt.cores[0]
    for core in tt.cores[1:]:
        result = np.tensordot(result, core, axes=(-1, 0))
    return DenseTensor.from_array(result[..., 0])


def tt_to_matrix(tt: TensorTrain) -> np.ndarray:
    """Dense n_1...n_d x l matrix whose columns are the batch slices"""
    array = contract_full(tt).array
    return array.reshape((tt.batch, -1), order="F").T


def ttm_to_matrices(ttm: TTMatrix) -> np.ndarray:
    """Dense l x N x M stack of the batch slices"""
    return np.array(contract_full(ttm).array)


def tt_from_dense(x: DenseTensor, policy: RoundingPolicy = RoundingPolicy(),
                  batched: bool = False) -> TensorTrain:
    """TT-SVD: sequential truncated SVDs of the unfoldings of ``x``

    Args:
        x: Dense tensor (n_1, ..., n_d)
        policy: Truncation settings; tolerance 0 recovers the exact TT-ranks
        batched: Treat the leading mode of ``x`` as the batch index l

    Returns:
        TensorTrain: Approximation with relative error <= policy.tolerance
    """
    array = np.array(x.array)
    if batched:
        if x.order < 2:
            raise TensorError("A batched tensor needs a batch mode and at least one more mode")
        left = array.shape[0]
        dims = array.shape[1:]
    else:
        left = 1
        dims = array.shape
        array = array.reshape((1,) + dims)
    d = len(dims)
    delta = policy.tolerance * np.linalg.norm(array) / math.sqrt(max(d - 1, 1))

    cores = []
    carry = array
    for k in range(d - 1):
        mat = carry.reshape(left * dims[k], -1)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        rank = _truncation_rank(s, delta, policy.max_rank, max(mat.shape))
        cores.append(u[:, :rank].reshape(left, dims[k], rank))
        carry = (s[:rank, None] * vt[:rank]).reshape((rank,) + dims[k + 1:])
        left = rank
    cores.append(carry.reshape(left, dims[-1], 1))
    return TensorTrain(tuple(cores))


def _truncation_rank(s: np.ndarray, delta: float, max_rank: Optional[int], dim: int) -> int:
    """Smallest rank whose discarded singular-value energy stays within delta**2"""
    if s.size == 0 or s[0] == 0:
        return 1
    numerical = int(np.count_nonzero(s > dim * np.finfo(float).eps * s[0]))
    tail = np.append(np.cumsum((s ** 2)[::-1])[::-1], 0.0)
    rank = int(np.flatnonzero(tail <= delta ** 2)[0])
    rank = max(1, min(rank, numerical))
    if max_rank is not None:
        rank = min(rank, max_rank)
    return rank


def _right_orthogonalize(cores: List[np.ndarray]) -> List[np.ndarray]:
    """Right-to-left QR sweep; cores 2..d end up right-orthogonal"""
    cores = list(cores)
    for k in range(len(cores) - 1, 0, -1):
        r0, n, r1 = cores[k].shape
        q, r = np.linalg.qr(cores[k].reshape(r0, n * r1).T)
        cores[k] = q.T.reshape(-1, n, r1)
        cores[k - 1] = np.tensordot(cores[k - 1], r.T, axes=(2, 0))
    return cores


def tt_orthogonalize(tt: AnyTrain) -> AnyTrain:
    """Same tensor with every core but the first right-orthogonal"""
    return _rebuild(tt, _right_orthogonalize(_flatten_cores(tt)))


def tt_norm(tt: AnyTrain) -> float:
    """Frobenius norm over all batch slices, computed without densifying"""
    cores = _right_orthogonalize(_flatten_cores(tt))
    return float(np.linalg.norm(cores[0]))


def tt_inner(a: TensorTrain, b: TensorTrain) -> float:
    """Frobenius inner product of two trains with the same structure"""
    _check_same_structure(a, b, "tt_inner")
    env = np.einsum("lia,lib->ab", a.cores[0], b.cores[0])
    for ca, cb in zip(a.cores[1:], b.cores[1:]):
        env = np.einsum("ab,aic,bid->cd", env, ca, cb)
    return float(env[0, 0])


def tt_add(a: AnyTrain, b: AnyTrain) -> AnyTrain:
    """Sum of two trains by core concatenation; internal ranks add up

    The first cores are stacked along the rank mode only, so the batch index
    is shared, and the last cores along their leading rank so r_d stays 1.
    """
    _check_same_structure(a, b, "tt_add")
    ca = _flatten_cores(a)
    cb = _flatten_cores(b)
    d = len(ca)
    if d == 1:
        return _rebuild(a, [ca[0] + cb[0]])

    cores = [np.concatenate([ca[0], cb[0]], axis=2)]
    for k in range(1, d - 1):
        ra0, n, ra1 = ca[k].shape
        rb0, _, rb1 = cb[k].shape
        block = np.zeros((ra0 + rb0, n, ra1 + rb1))
        block[:ra0, :, :ra1] = ca[k]
        block[ra0:, :, ra1:] = cb[k]
        cores.append(block)
    cores.append(np.concatenate([ca[-1], cb[-1]], axis=0))
    return _rebuild(a, cores)


def tt_scale(tt: AnyTrain, alpha: float) -> AnyTrain:
    """Multiply the whole train by a scalar through its first core"""
    cores = list(tt.cores)
    cores[0] = cores[0] * alpha
    return type(tt)(tuple(cores))


def tt_scale_batch(tt: AnyTrain, weights: np.ndarray) -> AnyTrain:
    """Scale batch slice k by weights[k] with a contraction on the first core only"""
    weights = np.asarray(weights, dtype=float).ravel()
    if weights.size != tt.batch:
        raise DimensionMismatchError(
            f"Expected {tt.batch} batch weights, got {weights.size}"
        )
    cores = list(tt.cores)
    first = cores[0]
    cores[0] = first * weights.reshape((-1,) + (1,) * (first.ndim - 1))
    return type(tt)(tuple(cores))


def tt_round(tt: AnyTrain, policy: Optional[RoundingPolicy]) -> AnyTrain:
    """Rank reduction: right-to-left QR sweep, then left-to-right truncated SVDs

    The per-SVD budget is tolerance * ||x||_F / sqrt(d - 1), so the relative
    Frobenius error of the result is at most ``policy.tolerance``. The first
    core's row dimension is l * n_1, so the batch index is never truncated.
    ``policy=None`` returns the input unchanged.

    The result remembers its policy in ``rounded_at``. Rounding it again
    under a policy it covers returns it as is: the first pass already spent
    the error budget, and a fresh budget would truncate past it.
    """
    if policy is None:
        return tt
    if tt.rounded_at is not None and tt.rounded_at.covers(policy):
        return tt
    cores = _right_orthogonalize(_flatten_cores(tt))
    d = len(cores)
    if d == 1:
        return _rebuild(tt, cores, policy)

    norm = np.linalg.norm(cores[0])
    delta = policy.tolerance * norm / math.sqrt(d - 1)
    for k in range(d - 1):
        r0, n, r1 = cores[k].shape
        mat = cores[k].reshape(r0 * n, r1)
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
        rank = _truncation_rank(s, delta, policy.max_rank, max(mat.shape))
        cores[k] = u[:, :rank].reshape(r0, n, rank)
        cores[k + 1] = np.tensordot(s[:rank, None] * vt[:rank], cores[k + 1], axes=(1, 0))

    rounded = _rebuild(tt, cores, policy)
    logger.debug("Rounded %s -> ranks %s", tt.ranks, rounded.ranks)
    return rounded


def _mode_list(n_list: Union[int, Sequence[int]], d: int) -> List[int]:
    if isinstance(n_list, (int, np.integer)):
        return [int(n_list)] * d
    n_list = [int(n) for n in n_list]
    if len(n_list) != d:
        raise DimensionMismatchError(f"Expected {d} mode sizes, got {len(n_list)}")
    return n_list


def zeros_tt(l: int, n_list: Union[int, Sequence[int]], d: int) -> TensorTrain:
    """All-zero train with unit ranks (initial mean of the filter)"""
    if l < 1 or d < 1:
        raise TensorError(f"Need l >= 1 and d >= 1, got l={l}, d={d}")
    dims = _mode_list(n_list, d)
    cores = [np.zeros((l, dims[0], 1))] + [np.zeros((1, n, 1)) for n in dims[1:]]
    return TensorTrain(tuple(cores))


def scaled_identity_ttm(variances: Sequence[float], n: int, d: int) -> TTMatrix:
    """Unit-rank TT-matrix whose batch slice i is variances[i] * I_{n^d}

    Used for the initial covariance and for diagonal process noise.
    """
    variances = np.asarray(variances, dtype=float).ravel()
    if variances.size < 1:
        raise TensorError("At least one variance is required")
    if np.any(variances <= 0):
        raise TensorError(f"Variances must be positive, got {variances.tolist()}")
    eye = np.eye(n)
    first = variances[:, None, None, None] * eye[None, :, :, None]
    cores = [first] + [eye[None, :, :, None] for _ in range(d - 1)]
    return TTMatrix(tuple(cores))


def identity_ttm(n: int, d: int) -> TTMatrix:
    return scaled_identity_ttm([1.0], n, d)


def rank1_tt_from_vector(u: np.ndarray, d: int) -> TensorTrain:
    """Unit-rank train whose every core is ``u``; it represents u⊗...⊗u"""
    if d < 1:
        raise TensorError(f"Degree must be >= 1, got {d}")
    u = np.asarray(u, dtype=float).ravel()
    core = u.reshape(1, -1, 1)
    return TensorTrain(tuple([core] * d))


def random_tt(l: int, n_list: Union[int, Sequence[int]], ranks: Sequence[int],
              rng: np.random.Generator) -> TensorTrain:
    """Train with standard normal cores and the given internal ranks"""
    dims = _mode_list(n_list, len(ranks) + 1)
    full_ranks = [l, *ranks, 1]
    cores = [rng.standard_normal((full_ranks[k], dims[k], full_ranks[k + 1]))
             for k in range(len(dims))]
    return TensorTrain(tuple(cores))


def random_ttm(l: int, n_list: Union[int, Sequence[int]], ranks: Sequence[int],
               rng: np.random.Generator) -> TTMatrix:
    """Square TT-matrix with standard normal cores"""
    dims = _mode_list(n_list, len(ranks) + 1)
    full_ranks = [l, *ranks, 1]
    cores = [rng.standard_normal((full_ranks[k], dims[k], dims[k], full_ranks[k + 1]))
             for k in range(len(dims))]
    return TTMatrix(tuple(cores))


def storage_count(tt: AnyTrain) -> int:
    """Number of floats stored in the cores"""
    return int(sum(core.size for core in tt.cores))

"""Dense multi-way arrays and the index/product conventions used everywhere.

A d-way tensor of dimensions (n_1, ..., n_d) is linearized with the first
index running fastest: element (i_1, ..., i_d), 1-based, sits at

    i_1 + (i_2 - 1) n_1 + ... + (i_d - 1) n_1 ... n_{d-1}

Every reshape or vectorization in the package goes through this rule, which
in numpy terms is ``order='F'``. Public indices are 1-based; the conversion
to numpy's 0-based indices lives in ``multi_to_linear``/``linear_to_multi``.

Dense tensors exist as oracles for the tensor-train code, so they are capped
by ``DENSE_SIZE_GUARD``.
"""
import logging
from dataclasses import dataclass
from functools import reduce
from typing import Sequence, Tuple

import numpy as np

from src.utils.errors import (
    DimensionMismatchError,
    IndexBoundsError,
    SizeGuardError,
    TensorError,
)

logger = logging.getLogger(__name__)

# 4096 states -> a 4096 x 4096 covariance
DENSE_SIZE_GUARD = 2 ** 24


def check_dense_size(dims: Sequence[int], what: str = "dense tensor") -> int:
    """Raise SizeGuardError when a dense object with ``dims`` is too large

    Args:
        dims: Dimensions of the requested dense object
        what: Description used in the error message

    Returns:
        int: Number of elements
    """
    size = 1
    for n in dims:
        size *= int(n)
    if size > DENSE_SIZE_GUARD:
        raise SizeGuardError(
            f"{what} with dims {tuple(int(n) for n in dims)} has {size} elements, "
            f"above the dense size guard of {DENSE_SIZE_GUARD}"
        )
    return size


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """d-way array stored as a flat first-index-fastest vector"""
    dims: Tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if not dims:
            raise TensorError("DenseTensor needs at least one mode")
        if any(n < 1 for n in dims):
            raise TensorError(f"All dimensions must be >= 1, got {dims}")
        check_dense_size(dims)
        data = np.array(self.data, dtype=float).ravel()
        if data.size != int(np.prod(dims)):
            raise DimensionMismatchError(
                f"Data length {data.size} does not match product of dims {dims}"
            )
        data.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "DenseTensor":
        """Wrap an ndarray whose axes are the tensor modes"""
        array = np.asarray(array, dtype=float)
        if array.ndim == 0:
            array = array.reshape(1)
        return cls(dims=array.shape, data=array.ravel(order="F"))

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "DenseTensor":
        return cls(dims=tuple(dims), data=np.zeros(int(np.prod(dims))))

    @property
    def array(self) -> np.ndarray:
        """Read-only ndarray view with one axis per mode"""
        return self.data.reshape(self.dims, order="F")

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return self.data.size

    def reshape(self, dims: Sequence[int]) -> "DenseTensor":
        """Reinterpret the same linear data under new dimensions"""
        return DenseTensor(dims=tuple(dims), data=self.data)

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))

    def __getitem__(self, indices: Sequence[int]) -> float:
        """Element access with a 1-based multi-index"""
        return float(self.data[multi_to_linear(indices, self.dims) - 1])


def multi_to_linear(indices: Sequence[int], dims: Sequence[int]) -> int:
    """Map a 1-based multi-index to its 1-based linear index

    Args:
        indices: (i_1, ..., i_d) with 1 <= i_k <= n_k
        dims: (n_1, ..., n_d)

    Returns:
        int: i_1 + (i_2-1) n_1 + ... + (i_d-1) n_1...n_{d-1}
    """
    if len(indices) != len(dims):
        raise DimensionMismatchError(
            f"Multi-index of length {len(indices)} for a {len(dims)}-way tensor"
        )
    linear = 0
    stride = 1
    for mode, (i, n) in enumerate(zip(indices, dims), start=1):
        if not 1 <= i <= n:
            raise IndexBoundsError(mode, int(i), int(n))
        linear += (int(i) - 1) * stride
        stride *= int(n)
    return linear + 1


def linear_to_multi(index: int, dims: Sequence[int]) -> Tuple[int, ...]:
    """Inverse of ``multi_to_linear``"""
    total = int(np.prod(dims))
    if not 1 <= index <= total:
        raise IndexBoundsError(0, int(index), total)
    zero_based = np.unravel_index(int(index) - 1, tuple(int(n) for n in dims), order="F")
    return tuple(int(i) + 1 for i in zero_based)


def mode_k_product(t: DenseTensor, m: np.ndarray, k: int) -> DenseTensor:
    """Tensor-times-matrix product along mode ``k`` (1-based)

    Args:
        t: Input tensor with dims (n_1, ..., n_d)
        m: Matrix with shape (j, n_k)
        k: Mode index, 1 <= k <= d

    Returns:
        DenseTensor: dims of ``t`` with n_k replaced by j
    """
    m = np.atleast_2d(np.asarray(m, dtype=float))
    if not 1 <= k <= t.order:
        raise IndexBoundsError(k, k, t.order)
    if m.shape[1] != t.dims[k - 1]:
        raise DimensionMismatchError(
            f"Mode-{k} product: matrix has {m.shape[1]} columns, tensor mode has {t.dims[k - 1]}"
        )
    result = np.tensordot(m, t.array, axes=(1, k - 1))
    return DenseTensor.from_array(np.moveaxis(result, 0, k - 1))


def kronecker(b: DenseTensor, c: DenseTensor) -> DenseTensor:
    """Tensor Kronecker product with ``c``'s index running fast in every mode"""
    if b.order != c.order:
        raise DimensionMismatchError(
            f"Kronecker product needs equal orders, got {b.order} and {c.order}"
        )
    check_dense_size([nb * nc for nb, nc in zip(b.dims, c.dims)], "Kronecker product")
    return DenseTensor.from_array(np.kron(b.array, c.array))


def khatri_rao(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product of an n x l and an m x l matrix"""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatchError(
            f"Khatri-Rao product needs equal column counts, got {a.shape[1]} and {b.shape[1]}"
        )
    n, cols = a.shape
    m = b.shape[0]
    return np.einsum("ik,jk->ijk", a, b).reshape(n * m, cols)


def colwise_outer(a: np.ndarray, b: np.ndarray) -> DenseTensor:
    """Stack the outer products of matching columns into an n x m x l tensor

    Slice k equals outer(a[:, k], b[:, k]). Under the linearization rule it is
    ``khatri_rao(b, a)`` reshaped to n x m x l.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatchError(
            f"Column-wise outer product needs equal column counts, got {a.shape[1]} and {b.shape[1]}"
        )
    return DenseTensor.from_array(np.einsum("ik,jk->ijk", a, b))


def repeated_kron(u: np.ndarray, d: int) -> np.ndarray:
    """u ⊗ u ⊗ ... ⊗ u with ``d`` factors"""
    if d < 1:
        raise TensorError(f"Repetition count must be >= 1, got {d}")
    u = np.asarray(u, dtype=float).ravel()
    check_dense_size([u.size ** d], "repeated Kronecker product")
    return reduce(np.kron, [u] * d)

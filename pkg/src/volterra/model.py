"""MIMO Volterra systems with the kernel stored as a tensor train.

A degree-d system with p inputs, l outputs and memory M maps

    u_t = (1, u_1(t), ..., u_p(t), u_1(t-1), ..., u_p(t-M+1))

to y(t) = (u_t ⊗ ... ⊗ u_t)^T V, where V is (pM+1)^d x l. V is kept as a
batched ``TensorTrain`` so y(t) is a chain of small contractions.
Sample indices are 0-based columns of the input matrix.
"""
import logging
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from src.tensor.dense import repeated_kron
from src.tensor.tensor_train import TensorTrain, zeros_tt
from src.utils.errors import DimensionMismatchError, TensorError

logger = logging.getLogger(__name__)


class SampleIndexError(TensorError, IndexError):
    """Requested sample lies outside the input record"""


@dataclass(frozen=True, eq=False)
class VolterraSpec:
    """Sizes of a Volterra system plus its kernel"""
    p: int
    l: int
    memory: int
    degree: int
    kernel: TensorTrain

    def __post_init__(self):
        if min(self.p, self.l, self.memory, self.degree) < 1:
            raise ValueError(
                f"p, l, memory and degree must be >= 1, got "
                f"{self.p}, {self.l}, {self.memory}, {self.degree}"
            )
        if self.kernel.batch != self.l:
            raise DimensionMismatchError(
                f"Kernel batch {self.kernel.batch} does not match {self.l} outputs"
            )
        if self.kernel.dims != (self.n,) * self.degree:
            raise DimensionMismatchError(
                f"Kernel dims {self.kernel.dims} do not match {self.degree} modes of size {self.n}"
            )

    @property
    def n(self) -> int:
        return self.p * self.memory + 1

    @property
    def state_length(self) -> int:
        return self.n ** self.degree

    @classmethod
    def zeros(cls, p: int, l: int, memory: int, degree: int) -> "VolterraSpec":
        return cls(p, l, memory, degree, zeros_tt(l, p * memory + 1, degree))


def is_padded(t: int, memory: int) -> bool:
    """True when u_t needs samples from before the start of the record"""
    return t < memory - 1


def build_ut(u: np.ndarray, t: int, p: int, memory: int) -> np.ndarray:
    """Input vector u_t; lags reaching before sample 0 are zero

    Args:
        u: (p, T) input record
        t: Sample index, 0 <= t < T
        p: Number of inputs
        memory: Memory length M

    Returns:
        np.ndarray: Length p*M+1 vector, 1 first, then lag 0 of all inputs,
            lag 1 of all inputs and so on
    """
    u = np.atleast_2d(np.asarray(u, dtype=float))
    if u.shape[0] != p:
        raise DimensionMismatchError(f"Input record has {u.shape[0]} channels, expected {p}")
    if not 0 <= t < u.shape[1]:
        raise SampleIndexError(f"Sample {t} out of range for a record of {u.shape[1]} samples")

    ut = np.zeros(p * memory + 1)
    ut[0] = 1.0
    for lag in range(min(memory, t + 1)):
        ut[1 + lag * p:1 + (lag + 1) * p] = u[:, t - lag]
    return ut


def evaluate_kernel(kernel: TensorTrain, ut: np.ndarray) -> np.ndarray:
    """(u_t^{⊗d})^T V evaluated core by core"""
    ut = np.asarray(ut, dtype=float).ravel()
    if any(n != ut.size for n in kernel.dims):
        raise DimensionMismatchError(f"u_t has {ut.size} entries, kernel modes are {kernel.dims}")
    chain = np.einsum("lir,i->lr", kernel.cores[0], ut)
    for core in kernel.cores[1:]:
        chain = chain @ np.einsum("aib,i->ab", core, ut)
    return chain[:, 0]


def simulate(spec: VolterraSpec, u: np.ndarray, t: int) -> np.ndarray:
    """Output vector y(t) of the system for the input record ``u``"""
    return evaluate_kernel(spec.kernel, build_ut(u, t, spec.p, spec.memory))


def simulate_record(spec: VolterraSpec, u: np.ndarray,
                    times: Optional[Iterable[int]] = None) -> np.ndarray:
    """Outputs for several samples as an (l, len(times)) array; all samples by default"""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    times = list(range(u.shape[1])) if times is None else list(times)
    y = np.zeros((spec.l, len(times)))
    for j, t in enumerate(times):
        y[:, j] = simulate(spec, u, t)
    return y


def dense_volterra_output(kernel_matrix: np.ndarray, ut: np.ndarray, degree: int) -> np.ndarray:
    """(u_t^{⊗d})^T V with V given as a dense (n^d, l) matrix"""
    kernel_matrix = np.asarray(kernel_matrix, dtype=float)
    if kernel_matrix.ndim == 1:
        kernel_matrix = kernel_matrix[:, None]
    powered = repeated_kron(ut, degree)
    if powered.size != kernel_matrix.shape[0]:
        raise DimensionMismatchError(
            f"Kernel has {kernel_matrix.shape[0]} rows, u_t^(x{degree}) has {powered.size}"
        )
    return powered @ kernel_matrix

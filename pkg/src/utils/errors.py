"""Exception types raised by the tensor, filter and Volterra modules.

All of them derive from ValueError so existing ``except ValueError`` handlers
keep catching them.
"""


class TensorError(ValueError):
    """Base class for invalid tensor operations"""


class IndexBoundsError(TensorError):
    """A multi-index entry lies outside its mode"""

    def __init__(self, mode: int, index: int, size: int):
        self.mode = mode
        self.index = index
        self.size = size
        super().__init__(
            f"Index {index} out of range for mode {mode} (valid range 1..{size})"
        )


class DimensionMismatchError(TensorError):
    """Operands do not agree on a mode, batch or column dimension"""


class SizeGuardError(TensorError):
    """A dense tensor would exceed the dense size guard"""


class RankError(TensorError):
    """Adjacent cores disagree on a rank or the trailing rank is not 1"""


class CovarianceError(TensorError):
    """Innovation variance is non-positive or numerically zero"""


class ContainerFormatError(TensorError):
    """A tensor-train container file could not be parsed"""

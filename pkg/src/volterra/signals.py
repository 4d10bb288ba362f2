"""Input/output records, their CSV format and the synthetic data generators.

CSV layout: ``t,u1..up,y1..yl`` and, when a noise-free reference is
attached, ``yref1..yrefl``. One row per sample, floats written with 17
significant digits so a write/read cycle is lossless.
"""
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from src.tensor.tensor_train import TensorTrain, rank1_tt_from_vector
from src.utils.errors import DimensionMismatchError
from src.volterra.model import VolterraSpec, simulate_record

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"

EXPERIMENT1_MEMORY = 4
EXPERIMENT1_DEGREE = 4
EXPERIMENT1_SAMPLES = 1000
EXPERIMENT1_NOISE_VARIANCE = 1e-2

MIXER_SAMPLE_RATE = 5000.0
MIXER_SAMPLES = 6000
MIXER_LO_HZ = 100.0
MIXER_IF_HZ = 300.0
MIXER_PHASE = np.pi / 8
MIXER_MEMORY = 10
MIXER_DEGREE = 7
MIXER_TOLERANCE = 0.1
# Mean rounding budget, separate from the covariance one
MIXER_MEAN_TOLERANCE = 1e-3
MIXER_MEAN_MAX_RANK = 20


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; the only source of randomness in the package"""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True, eq=False)
class IoRecord:
    """Sampled inputs u (p x T) and outputs y (l x T) of one experiment"""
    u: np.ndarray
    y: np.ndarray
    sample_rate: Optional[float] = None
    y_ref: Optional[np.ndarray] = None

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.u, dtype=float))
        y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if u.shape[1] != y.shape[1]:
            raise DimensionMismatchError(
                f"Inputs have {u.shape[1]} samples, outputs have {y.shape[1]}"
            )
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)
        if self.y_ref is not None:
            y_ref = np.atleast_2d(np.asarray(self.y_ref, dtype=float))
            if y_ref.shape != y.shape:
                raise DimensionMismatchError(
                    f"Reference output shape {y_ref.shape} differs from output shape {y.shape}"
                )
            object.__setattr__(self, "y_ref", y_ref)

    @property
    def p(self) -> int:
        return self.u.shape[0]

    @property
    def l(self) -> int:
        return self.y.shape[0]

    @property
    def samples(self) -> int:
        return self.u.shape[1]

    def head(self, count: int) -> "IoRecord":
        """First ``count`` samples"""
        y_ref = None if self.y_ref is None else self.y_ref[:, :count]
        return IoRecord(self.u[:, :count], self.y[:, :count], self.sample_rate, y_ref)

    def to_frame(self) -> pd.DataFrame:
        columns = {"t": np.arange(self.samples)}
        for i in range(self.p):
            columns[f"u{i + 1}"] = self.u[i]
        for i in range(self.l):
            columns[f"y{i + 1}"] = self.y[i]
        if self.y_ref is not None:
            for i in range(self.l):
                columns[f"yref{i + 1}"] = self.y_ref[i]
        return pd.DataFrame(columns)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, sample_rate: Optional[float] = None) -> "IoRecord":
        u = _numbered_columns(frame, "u")
        y = _numbered_columns(frame, "y")
        if u is None or y is None:
            raise ValueError("Record needs at least one u<k> and one y<k> column")
        y_ref = _numbered_columns(frame, "yref")
        return cls(u=u, y=y, sample_rate=sample_rate, y_ref=y_ref)


def _numbered_columns(frame: pd.DataFrame, prefix: str) -> Optional[np.ndarray]:
    pattern = re.compile(rf"^{prefix}(\d+)$")
    numbered = sorted(
        (int(match.group(1)), name)
        for name in frame.columns
        if (match := pattern.match(str(name)))
    )
    if not numbered:
        return None
    return frame[[name for _, name in numbered]].to_numpy(dtype=float).T


def write_record(record: IoRecord, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    record.to_frame().to_csv(path, index=False, float_format=FLOAT_FORMAT)
    logger.info(f"Wrote {record.samples} samples to {path}")
    return path


def read_record(path: Union[str, Path], sample_rate: Optional[float] = None) -> IoRecord:
    """Load a CSV written by ``write_record``"""
    frame = pd.read_csv(path, float_precision="round_trip")
    if "t" in frame.columns:
        frame = frame.sort_values("t")
    return IoRecord.from_frame(frame, sample_rate=sample_rate)


def gen_experiment1(seed: int, samples: int = EXPERIMENT1_SAMPLES,
                    noise_variance: float = EXPERIMENT1_NOISE_VARIANCE) -> Tuple[IoRecord, TensorTrain]:
    """Single-input single-output degree-4 system with memory 4

    The kernel is v ⊗ v ⊗ v ⊗ v for a standard normal v of length 5, so
    y(t) = (u_t^T v)^4 plus N(0, noise_variance) noise.

    Returns:
        tuple: (record with y_ref set to the noise-free output, true kernel)
    """
    rng = make_rng(seed)
    v = rng.standard_normal(EXPERIMENT1_MEMORY + 1)
    u = rng.standard_normal((1, samples))
    kernel = rank1_tt_from_vector(v, EXPERIMENT1_DEGREE)
    spec = VolterraSpec(1, 1, EXPERIMENT1_MEMORY, EXPERIMENT1_DEGREE, kernel)

    y_ref = simulate_record(spec, u)
    noise = np.sqrt(noise_variance) * rng.standard_normal((1, samples))
    logger.debug(f"Generated experiment-1 record: seed={seed}, samples={samples}")
    return IoRecord(u=u, y=y_ref + noise, sample_rate=None, y_ref=y_ref), kernel


def square_wave(phase: np.ndarray) -> np.ndarray:
    """sign(sin(phase)) with sign(0) taken as +1"""
    return np.where(np.sin(phase) >= 0, 1.0, -1.0)


def add_noise_at_snr(signal: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """Add white Gaussian noise so that the full-record SNR equals ``snr_db``

    The drawn noise is rescaled to the exact target power, so
    10 log10(mean(signal^2) / mean(noise^2)) is ``snr_db`` up to rounding.
    ``snr_db = +inf`` returns the signal unchanged.
    """
    if np.isnan(snr_db) or snr_db == -np.inf:
        raise ValueError(f"SNR must be finite or +inf, got {snr_db}")
    if snr_db == np.inf:
        return np.array(signal, dtype=float)
    signal_power = np.mean(np.abs(signal) ** 2)
    noise_power = signal_power / 10 ** (snr_db / 10.0)
    noise = rng.standard_normal(np.shape(signal))
    noise *= np.sqrt(noise_power / np.mean(noise ** 2))
    return signal + noise


def noise_variance_at_snr(signal: np.ndarray, snr_db: float) -> float:
    """Noise power that ``add_noise_at_snr`` adds to ``signal``, 0 at +inf"""
    if np.isnan(snr_db) or snr_db == -np.inf:
        raise ValueError(f"SNR must be finite or +inf, got {snr_db}")
    if snr_db == np.inf:
        return 0.0
    return float(np.mean(np.abs(signal) ** 2) / 10 ** (snr_db / 10.0))


def gen_mixer(seed: int, snr_db: float, samples: int = MIXER_SAMPLES,
              sample_rate: float = MIXER_SAMPLE_RATE) -> IoRecord:
    """Two-input mixer: a 100 Hz sine LO and a 300 Hz square IF

    The reference output is the ideal product lo * if; y adds noise at
    ``snr_db``.
    """
    rng = make_rng(seed)
    t = np.arange(samples) / sample_rate
    lo = np.sin(2 * np.pi * MIXER_LO_HZ * t)
    if_ = square_wave(2 * np.pi * MIXER_IF_HZ * t - MIXER_PHASE)
    y_ref = (lo * if_)[None, :]
    y = add_noise_at_snr(y_ref, snr_db, rng)
    logger.debug(f"Generated mixer record: seed={seed}, snr={snr_db} dB")
    return IoRecord(u=np.vstack([lo, if_]), y=y, sample_rate=sample_rate, y_ref=y_ref)

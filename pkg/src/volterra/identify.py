"""Recursive identification of a Volterra kernel with the TT Kalman filter.

The kernel V is the filter state; each sample contributes the measurement
y(t) = (u_t^{⊗d})^T V + r(t), whose measurement vector is the unit-rank
train of u_t.
"""
import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np
import pandas as pd

from src.kalman.tn_kalman import KalmanState, ModelSpec, initial_state, step_detailed
from src.monitor.performance import StepTracker
from src.tensor.tensor_train import (
    RoundingPolicy,
    TensorTrain,
    rank1_tt_from_vector,
    storage_count,
    tt_add,
    tt_inner,
    tt_norm,
    tt_scale,
)
from src.utils.errors import DimensionMismatchError
from src.volterra.model import VolterraSpec, build_ut, is_padded
from src.volterra.signals import IoRecord

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class IdentificationResult:
    spec: VolterraSpec
    state: KalmanState
    metrics: pd.DataFrame
    summary: Dict


def relative_error(true_kernel: TensorTrain, estimate: TensorTrain) -> float:
    """||V_true - V||_F / ||V_true||_F without leaving TT form"""
    reference = np.sqrt(max(tt_inner(true_kernel, true_kernel), 0.0))
    if reference == 0:
        return float("nan")
    return tt_norm(tt_add(true_kernel, tt_scale(estimate, -1.0))) / reference


def identify(data: IoRecord, memory: int, degree: int, model: ModelSpec,
             policy: Optional[RoundingPolicy] = RoundingPolicy(),
             variances=1000.0, true_kernel: Optional[TensorTrain] = None,
             iterations: Optional[int] = None,
             on_step: Optional[Callable[[Dict], None]] = None,
             quiet: bool = True) -> IdentificationResult:
    """Estimate the kernel of a degree-``degree`` system from ``data``

    Args:
        data: Input/output record; p and l are taken from it
        memory: Memory length M
        degree: Degree d
        model: Noise model; A = I and Q = 0 for a time-invariant kernel
        policy: Rounding policy, None disables rounding
        variances: Initial variance of every coefficient, scalar or one per output
        true_kernel: When given, the relative error is tracked per step
        iterations: Number of samples to filter, all by default
        on_step: Called with each step's metrics row
        quiet: False prints the final ranks, storage and error to the console

    Returns:
        IdentificationResult: Final kernel, filter state, per-step metrics
            and a run summary
    """
    p, l = data.p, data.l
    if data.samples <= memory:
        raise ValueError(f"Need more than {memory} samples, record has {data.samples}")
    if model.outputs != l:
        raise DimensionMismatchError(f"Model has {model.outputs} outputs, data has {l}")
    n = p * memory + 1
    if true_kernel is not None and (true_kernel.dims != (n,) * degree or true_kernel.batch != l):
        raise DimensionMismatchError(f"True kernel {true_kernel!r} does not match the model sizes")

    steps = data.samples if iterations is None else min(iterations, data.samples)
    state = initial_state(l, n, degree, variances, policy)
    tracker = StepTracker(degree, quiet=quiet)

    logger.info(
        f"Identifying degree-{degree} system: p={p}, l={l}, M={memory}, "
        f"{n}^{degree} coefficients per output, {steps} samples"
    )
    if is_padded(0, memory):
        logger.warning(f"First {min(memory - 1, steps)} samples use zero-padded input history")

    for t in range(steps):
        started = time.perf_counter()
        c = rank1_tt_from_vector(build_ut(data.u, t, p, memory), degree)
        state, diagnostics = step_detailed(state, model, c, data.y[:, t])
        elapsed = time.perf_counter() - started

        rel_err = np.nan if true_kernel is None else relative_error(true_kernel, state.mean)
        tracker.record_step(
            t=t,
            rel_err=rel_err,
            innovation=diagnostics.innovation,
            variance=diagnostics.variance,
            mean_ranks=state.mean.ranks,
            cov_ranks=state.cov.ranks,
            storage_mean=storage_count(state.mean),
            storage_cov=storage_count(state.cov),
            step_seconds=elapsed,
            padded=is_padded(t, memory),
        )
        if on_step is not None:
            on_step(tracker.rows[-1])

    summary = tracker.summarize()
    logger.info("Identification finished", extra={'summary': summary})
    spec = VolterraSpec(p, l, memory, degree, state.mean)
    return IdentificationResult(spec=spec, state=state, metrics=tracker.to_frame(), summary=summary)

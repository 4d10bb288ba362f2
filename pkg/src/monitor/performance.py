from typing import Dict, List, Optional
import logging

import numpy as np
import pandas as pd

from src.utils.console import blue_status, green_success, magenta_warning, rank_status

class StepTracker:
    """Collects per-step filter metrics and summarizes a run"""

    def __init__(self, degree: int, quiet: bool = True):
        """Initialize step tracker

        Args:
            degree: Number of TT cores, fixes the rank columns
            quiet: Suppress console status lines
        """
        self.logger = logging.getLogger(__name__)
        self.degree = degree
        self.quiet = quiet
        self.rows: List[Dict] = []
        if not quiet:
            blue_status("Step tracking initialized")

    def record_step(self, t: int, rel_err: float, innovation: np.ndarray, variance: np.ndarray,
                    mean_ranks, cov_ranks, storage_mean: int, storage_cov: int,
                    step_seconds: float, padded: bool):
        """Record metrics of one completed filter step

        For a single output ``innovation`` and ``s`` are the scalar values;
        for several outputs they hold ||v||_2 and min_k s_k.
        """
        innovation = np.atleast_1d(innovation)
        variance = np.atleast_1d(variance)
        row = {
            't': t,
            'rel_err': rel_err,
            'innovation': float(innovation[0]) if innovation.size == 1 else float(np.linalg.norm(innovation)),
            's': float(variance.min()),
        }
        for k in range(self.degree - 1):
            row[f'rank_mean_{k + 1}'] = int(mean_ranks[k])
        for k in range(self.degree - 1):
            row[f'rank_cov_{k + 1}'] = int(cov_ranks[k])
        row['storage_mean'] = int(storage_mean)
        row['storage_cov'] = int(storage_cov)
        row['step_seconds'] = float(step_seconds)
        row['padded'] = int(bool(padded))
        self.rows.append(row)

    def to_frame(self) -> pd.DataFrame:
        """Metrics as a DataFrame with one row per step"""
        columns = (
            ['t', 'rel_err', 'innovation', 's']
            + [f'rank_mean_{k + 1}' for k in range(self.degree - 1)]
            + [f'rank_cov_{k + 1}' for k in range(self.degree - 1)]
            + ['storage_mean', 'storage_cov', 'step_seconds', 'padded']
        )
        return pd.DataFrame(self.rows, columns=columns)

    def summarize(self) -> Optional[Dict]:
        """Summary of the run

        Returns:
            dict: Final error, median step time, maximum ranks and storage,
                or None when no step was recorded
        """
        if not self.rows:
            self.logger.info("No steps to summarize")
            return None

        frame = self.to_frame()
        mean_cols = [c for c in frame.columns if c.startswith('rank_mean_')]
        cov_cols = [c for c in frame.columns if c.startswith('rank_cov_')]
        final_err = frame['rel_err'].iloc[-1]
        summary = {
            'steps': len(frame),
            'final_rel_err': None if pd.isna(final_err) else float(final_err),
            'median_step_seconds': float(frame['step_seconds'].median()),
            'max_rank_mean': [int(frame[c].max()) for c in mean_cols],
            'max_rank_cov': [int(frame[c].max()) for c in cov_cols],
            'final_rank_mean': [int(frame[c].iloc[-1]) for c in mean_cols],
            'final_rank_cov': [int(frame[c].iloc[-1]) for c in cov_cols],
            'max_storage': int((frame['storage_mean'] + frame['storage_cov']).max()),
            'padded_steps': int(frame['padded'].sum()),
        }

        self.logger.info("Run summary calculated", extra={'summary': summary})
        if not self.quiet:
            blue_status(
                f"Steps: {summary['steps']}, median step "
                f"{summary['median_step_seconds'] * 1e3:.2f} ms, "
                f"max mean ranks {summary['max_rank_mean']}"
            )
            last = frame.iloc[-1]
            rank_status("Mean", summary['final_rank_mean'], int(last['storage_mean']))
            rank_status("Covariance", summary['final_rank_cov'], int(last['storage_cov']))
            if summary['final_rel_err'] is None:
                magenta_warning("No true kernel supplied, relative error not tracked")
            else:
                green_success(f"Final relative error: {summary['final_rel_err']:.3e}")
        return summary

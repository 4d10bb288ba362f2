import json
import logging
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .utils import linear_fit_r2, median_seconds, relative_deviation, rmse, symmetry_drift
from src.kalman.dense_kalman import dense_kalman_step
from src.kalman.tn_kalman import ModelSpec, initial_state, step_detailed
from src.tensor.dense import check_dense_size, repeated_kron
from src.tensor.serialization import load_tt, save_tt
from src.tensor.tensor_train import (
    RoundingPolicy,
    TensorTrain,
    identity_ttm,
    rank1_tt_from_vector,
    storage_count,
    tt_to_matrix,
    ttm_to_matrices,
)
from src.utils.errors import SizeGuardError
from src.volterra.identify import identify
from src.volterra.model import build_ut, simulate_record
from src.volterra.signals import (
    MIXER_DEGREE,
    MIXER_MEAN_MAX_RANK,
    MIXER_MEAN_TOLERANCE,
    MIXER_MEMORY,
    MIXER_TOLERANCE,
    IoRecord,
    gen_experiment1,
    gen_mixer,
    make_rng,
    noise_variance_at_snr,
    read_record,
    write_record,
)

METRICS_FLOAT_FORMAT = "%.17g"
SYMMETRY_WARN = 1e-8

logger = logging.getLogger(__name__)


def build_model(r_diag: Sequence[float], l: int, n: int, d: int, identity_a: bool = True,
                process_variance: float = 0.0) -> ModelSpec:
    """ModelSpec for a time-invariant or random-walk kernel

    ``identity_a=False`` passes A = I explicitly, so the A contractions run
    instead of being skipped.
    """
    r_diag = np.broadcast_to(np.asarray(r_diag, dtype=float), (l,)).copy()
    model = ModelSpec.time_invariant(r_diag, n, d, process_variance)
    if identity_a:
        return model
    return ModelSpec(r_diag=model.r_diag, A=identity_ttm(n, d), Q=model.Q)


def compare_filters(record: IoRecord, memory: int, degree: int, model: ModelSpec,
                    policy: Optional[RoundingPolicy], variance: float,
                    iterations: Optional[int] = None) -> pd.DataFrame:
    """Run the dense and the TT filter side by side on the same samples

    Returns:
        DataFrame: Per step relative deviation of mean and covariance,
            covariance asymmetry and both step times

    Raises:
        SizeGuardError: The dense covariance would exceed the dense size guard
    """
    p, l = record.p, record.l
    n = p * memory + 1
    states = n ** degree
    check_dense_size([l, states, states], "dense covariance")

    steps = record.samples if iterations is None else min(iterations, record.samples)
    state = initial_state(l, n, degree, variance, policy)
    dense_mean = np.zeros((states, l))
    dense_cov = np.stack([variance * np.eye(states)] * l)
    dense_a = None if model.A is None else ttm_to_matrices(model.A)[0]
    dense_q = None if model.Q is None else ttm_to_matrices(model.Q)

    rows = []
    for t in range(steps):
        ut = build_ut(record.u, t, p, memory)
        y = record.y[:, t]

        started = time.perf_counter()
        state, _ = step_detailed(state, model, rank1_tt_from_vector(ut, degree), y)
        tn_seconds = time.perf_counter() - started

        started = time.perf_counter()
        dense_mean, dense_cov = dense_kalman_step(
            dense_mean, dense_cov, dense_a, repeated_kron(ut, degree), dense_q, model.r_diag, y
        )
        dense_seconds = time.perf_counter() - started

        tn_cov = ttm_to_matrices(state.cov)
        rows.append({
            't': t,
            'mean_dev': relative_deviation(tt_to_matrix(state.mean), dense_mean),
            'cov_dev': relative_deviation(tn_cov, dense_cov),
            'asymmetry': symmetry_drift(tn_cov),
            'tn_seconds': tn_seconds,
            'dense_seconds': dense_seconds,
        })

    report = pd.DataFrame(rows)
    worst = float(report['asymmetry'].max()) if not report.empty else 0.0
    if worst > SYMMETRY_WARN:
        logger.warning(f"Covariance symmetry drift reached {worst:.3e}")
    return report


def bench_degrees(degrees: Sequence[int], n: int, steps: int, policy: RoundingPolicy,
                  seed: int, dense: bool = False) -> pd.DataFrame:
    """Median TT step time for each degree, plus the dense time where it fits

    Inputs are standard normal with a leading 1, as in identification.
    """
    rows = []
    for d in degrees:
        rng = make_rng(seed)
        model = ModelSpec.time_invariant([1e-2], n, d)
        state = initial_state(1, n, d, 1000.0, policy)
        inputs = [np.concatenate([[1.0], rng.standard_normal(n - 1)]) for _ in range(steps)]
        outputs = rng.standard_normal(steps)

        times = []
        for ut, y in zip(inputs, outputs):
            started = time.perf_counter()
            state, _ = step_detailed(state, model, rank1_tt_from_vector(ut, d), np.array([y]))
            times.append(time.perf_counter() - started)

        dense_median = float('nan')
        if dense:
            try:
                dense_median = _bench_dense(inputs, outputs, n, d)
            except SizeGuardError as e:
                logger.warning(f"Dense filter skipped for d={d}: {e}")

        rows.append({
            'd': d,
            'n': n,
            'median_step_seconds': median_seconds(times),
            'dense_median_step_seconds': dense_median,
            'max_rank_mean': max(state.mean.ranks, default=1),
            'max_rank_cov': max(state.cov.ranks, default=1),
            'storage': storage_count(state.mean) + storage_count(state.cov),
        })
        logger.info(f"Benchmarked d={d}: median {rows[-1]['median_step_seconds']:.3e} s")
    return pd.DataFrame(rows)


def _bench_dense(inputs: List[np.ndarray], outputs: np.ndarray, n: int, d: int) -> float:
    states = n ** d
    check_dense_size([states, states], "dense covariance")
    mean = np.zeros((states, 1))
    cov = 1000.0 * np.eye(states)[None]
    times = []
    for ut, y in zip(inputs, outputs):
        started = time.perf_counter()
        mean, cov = dense_kalman_step(mean, cov, None, repeated_kron(ut, d), None, [1e-2], [y])
        times.append(time.perf_counter() - started)
    return median_seconds(times)


def holdout_rmse(record: IoRecord, spec, holdout: int) -> Optional[float]:
    """RMSE of the simulated output over the last ``holdout`` samples

    Compared against the noise-free reference when the record carries one.
    """
    if holdout <= 0:
        return None
    times = range(record.samples - holdout, record.samples)
    simulated = simulate_record(spec, record.u, times)
    reference = record.y if record.y_ref is None else record.y_ref
    return rmse(simulated, reference[:, record.samples - holdout:])


class ExperimentEngine:
    """Runs the CLI commands on a validated configuration"""

    def __init__(self, config, app_logger=None):
        """Initialize experiment engine

        Args:
            config: Validated Config instance
            app_logger: Optional Logger whose log_step/log_summary receive metrics
        """
        self.logger = logging.getLogger(__name__)
        self.config = config
        self.app_logger = app_logger
        self.output_dir = Path(config.run.output_dir)

    def _policy(self) -> Optional[RoundingPolicy]:
        f = self.config.filter
        return RoundingPolicy(tolerance=f.tolerance, max_rank=f.max_rank,
                              mean_tolerance=f.mean_tolerance, mean_max_rank=f.mean_max_rank)

    def _write_json(self, name: str, payload: Dict) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.output_dir / name
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str))
        return path

    def generate(self) -> Tuple[int, Dict]:
        """Write experiment records, a JSON sidecar and, for siso4, the true kernel"""
        run = self.config.run
        self.output_dir.mkdir(parents=True, exist_ok=True)
        files = []

        if run.experiment == 'siso4':
            samples = run.iterations or 1000
            record, kernel = gen_experiment1(run.seed, samples=samples)
            files.append(str(write_record(record, self.output_dir / 'siso4.csv')))
            files.append(str(save_tt(self.output_dir / 'siso4_kernel.tt', kernel)))
            params = {'experiment': 'siso4', 'seed': run.seed, 'samples': samples,
                      'p': 1, 'l': 1, 'memory': 4, 'degree': 4, 'noise_variance': 1e-2}
        else:
            records = [gen_mixer(run.seed, snr) for snr in run.snr_db]
            if run.batch:
                first = records[0]
                record = IoRecord(
                    u=first.u,
                    y=np.vstack([r.y for r in records]),
                    sample_rate=first.sample_rate,
                    y_ref=np.vstack([r.y_ref for r in records]),
                )
                files.append(str(write_record(record, self.output_dir / 'mixer_batch.csv')))
            else:
                for snr, record in zip(run.snr_db, records):
                    files.append(str(write_record(record, self.output_dir / f'mixer_snr{snr:g}.csv')))
            params = {'experiment': 'mixer', 'seed': run.seed, 'snr_db': list(run.snr_db),
                      'samples': records[0].samples, 'sample_rate': records[0].sample_rate,
                      'batch': run.batch,
                      'p': 2, 'l': 1, 'memory': MIXER_MEMORY, 'degree': MIXER_DEGREE,
                      'noise_variance': [noise_variance_at_snr(r.y_ref, snr)
                                         for snr, r in zip(run.snr_db, records)],
                      'tolerance': MIXER_TOLERANCE, 'mean_tolerance': MIXER_MEAN_TOLERANCE,
                      'mean_max_rank': MIXER_MEAN_MAX_RANK}

        params['files'] = files
        self._write_json(f'{run.experiment}_params.json', params)
        self.logger.info("Generated experiment data", extra={'params': params})
        return 0, params

    def identify(self) -> Tuple[int, Dict]:
        """Identify a kernel from an input record and write metrics, model and summary"""
        m, f, run = self.config.model, self.config.filter, self.config.run
        if not run.input_path:
            raise FileNotFoundError("identify needs an input record (--input)")
        record = read_record(run.input_path)
        if run.batch:
            # One filter over every output column of the record
            m.l = record.l
            if len(f.r_diag) not in (1, m.l):
                raise ValueError(f"r_diag needs 1 or {m.l} entries for a batched run")
        if record.p != m.p or record.l != m.l:
            raise ValueError(
                f"Record has p={record.p}, l={record.l}; configuration says p={m.p}, l={m.l}"
            )
        truth = load_tt(run.truth_path) if run.truth_path else None
        if truth is not None and not isinstance(truth, TensorTrain):
            raise ValueError(f"{run.truth_path} holds a TT-matrix, expected a kernel")

        train = record.head(record.samples - run.holdout) if run.holdout else record
        model = build_model(f.r_diag, m.l, m.n, m.degree, f.identity_a, f.process_variance)
        on_step = self.app_logger.log_step if self.app_logger is not None else None
        result = identify(
            train, m.memory, m.degree, model, self._policy(), f.variance,
            true_kernel=truth, iterations=run.iterations, on_step=on_step,
            quiet=not run.status,
        )

        self.output_dir.mkdir(parents=True, exist_ok=True)
        metrics_path = self.output_dir / 'metrics.csv'
        result.metrics.to_csv(metrics_path, index=False, float_format=METRICS_FLOAT_FORMAT)
        model_path = save_tt(self.output_dir / 'kernel.tt', result.spec.kernel)

        summary = dict(result.summary)
        summary['holdout_rmse'] = holdout_rmse(record, result.spec, run.holdout)
        summary['metrics_path'] = str(metrics_path)
        summary['model_path'] = str(model_path)
        self._write_json('summary.json', summary)
        if self.app_logger is not None:
            self.app_logger.log_summary(summary)
        return 0, summary

    def compare(self) -> Tuple[int, Dict]:
        """Dense vs TT filter; exit code 0 iff both deviations stay within the bound"""
        m, f, run = self.config.model, self.config.filter, self.config.run
        if run.input_path:
            record = read_record(run.input_path)
        else:
            record, _ = gen_experiment1(run.seed, samples=run.iterations or 100)
        if record.p != m.p:
            raise ValueError(f"Record has p={record.p}; configuration says p={m.p}")
        model = build_model(f.r_diag, record.l, m.n, m.degree, f.identity_a, f.process_variance)
        report = compare_filters(
            record, m.memory, m.degree, model, self._policy(), f.variance, run.iterations,
        )

        self.output_dir.mkdir(parents=True, exist_ok=True)
        report_path = self.output_dir / 'compare.csv'
        report.to_csv(report_path, index=False, float_format=METRICS_FLOAT_FORMAT)
        summary = {
            'steps': len(report),
            'max_mean_dev': float(report['mean_dev'].max()),
            'max_cov_dev': float(report['cov_dev'].max()),
            'max_asymmetry': float(report['asymmetry'].max()),
            'median_tn_seconds': median_seconds(report['tn_seconds']),
            'median_dense_seconds': median_seconds(report['dense_seconds']),
            'bound': run.bound,
            'report_path': str(report_path),
        }
        summary['passed'] = max(summary['max_mean_dev'], summary['max_cov_dev']) <= run.bound
        self._write_json('compare_summary.json', summary)
        if self.app_logger is not None:
            self.app_logger.log_summary(summary)
        return (0 if summary['passed'] else 1), summary

    def bench(self) -> Tuple[int, Dict]:
        """Step-time sweep over the configured degrees with its linear fit"""
        f, run = self.config.filter, self.config.run
        policy = RoundingPolicy(tolerance=f.tolerance, max_rank=f.max_rank or 1)
        table = bench_degrees(run.degrees, run.bench_n, run.bench_steps, policy, run.seed, dense=True)

        self.output_dir.mkdir(parents=True, exist_ok=True)
        table_path = self.output_dir / 'bench.csv'
        table.to_csv(table_path, index=False, float_format=METRICS_FLOAT_FORMAT)
        summary = {'table_path': str(table_path), 'rows': table.to_dict(orient='records')}
        if len(table) >= 2:
            summary['fit'] = linear_fit_r2(table['d'], table['median_step_seconds'])
        self._write_json('bench_summary.json', summary)
        if self.app_logger is not None:
            self.app_logger.log_summary(summary)
        return 0, summary

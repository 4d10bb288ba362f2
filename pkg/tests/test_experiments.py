import json
import math
import os
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pandas as pd

from config.config import Config
from experiments.engine import (
    ExperimentEngine,
    bench_degrees,
    build_model,
    compare_filters,
    holdout_rmse,
)
from experiments.utils import (
    linear_fit_r2,
    median_seconds,
    relative_deviation,
    rmse,
    symmetry_drift,
)
from src.tensor.tensor_train import RoundingPolicy
from src.utils.errors import SizeGuardError
from src.volterra.model import VolterraSpec
from src.volterra.signals import IoRecord, make_rng, read_record

def small_record(seed=0, samples=20):
    rng = make_rng(seed)
    return IoRecord(u=rng.standard_normal((1, samples)), y=rng.standard_normal((1, samples)))

class TestMetricHelpers(unittest.TestCase):

    def test_rmse(self):
        self.assertAlmostEqual(rmse([1.0, 2.0], [1.0, 4.0]), math.sqrt(2.0))
        with self.assertRaises(ValueError):
            rmse([1.0], [1.0, 2.0])

    def test_relative_deviation(self):
        self.assertAlmostEqual(relative_deviation([2.0, 0.0], [1.0, 0.0]), 1.0)
        self.assertAlmostEqual(relative_deviation([0.5], [0.0]), 0.5)

    def test_symmetry_drift(self):
        self.assertEqual(symmetry_drift(np.eye(3)), 0.0)
        skewed = np.array([[1.0, 1.0], [0.0, 1.0]])
        self.assertGreater(symmetry_drift(np.stack([np.eye(2), skewed])), 0.1)

    def test_linear_fit(self):
        fit = linear_fit_r2([2, 3, 4, 5], [1.0, 3.0, 5.0, 7.0])
        self.assertAlmostEqual(fit['slope'], 2.0)
        self.assertAlmostEqual(fit['intercept'], -3.0)
        self.assertAlmostEqual(fit['r2'], 1.0)
        with self.assertRaises(ValueError):
            linear_fit_r2([1], [1])

    def test_median_seconds(self):
        self.assertEqual(median_seconds([3.0, 1.0, 2.0]), 2.0)
        self.assertTrue(math.isnan(median_seconds([])))

class TestFilterComparison(unittest.TestCase):

    def test_exact_rounding_matches_dense(self):
        record = small_record()
        model = build_model([1e-2], 1, 3, 2)
        report = compare_filters(record, 2, 2, model, RoundingPolicy(), 1000.0)
        self.assertEqual(len(report), 20)
        self.assertLess(report['mean_dev'].max(), 1e-8)
        self.assertLess(report['cov_dev'].max(), 1e-8)
        self.assertLess(report['asymmetry'].max(), 1e-8)

    def test_explicit_transition(self):
        record = small_record(1)
        model = build_model([1e-2], 1, 3, 2, identity_a=False, process_variance=1e-3)
        self.assertIsNotNone(model.A)
        report = compare_filters(record, 2, 2, model, RoundingPolicy(), 1000.0, iterations=10)
        self.assertEqual(len(report), 10)
        self.assertLess(report['cov_dev'].max(), 1e-8)

    def test_coarse_rounding_deviates(self):
        model = build_model([1e-2], 1, 3, 2)
        report = compare_filters(small_record(), 2, 2, model, RoundingPolicy(tolerance=0.5), 1000.0)
        self.assertGreater(report['cov_dev'].max(), 1e-8)

    def test_size_guard(self):
        model = build_model([1e-2], 1, 5, 6)
        with self.assertRaises(SizeGuardError):
            compare_filters(small_record(), 4, 6, model, RoundingPolicy(), 1000.0)

class TestBenchAndHoldout(unittest.TestCase):

    def test_bench_degrees(self):
        table = bench_degrees([2, 3], 3, 4, RoundingPolicy(max_rank=1), seed=0, dense=True)
        self.assertEqual(list(table['d']), [2, 3])
        self.assertTrue((table['median_step_seconds'] > 0).all())
        self.assertTrue((table['max_rank_cov'] == 1).all())
        self.assertFalse(table['dense_median_step_seconds'].isna().any())

    def test_holdout_uses_reference(self):
        rng = make_rng(2)
        u = rng.standard_normal((1, 10))
        spec = VolterraSpec.zeros(1, 1, 2, 2)
        record = IoRecord(u=u, y=np.ones((1, 10)), y_ref=np.full((1, 10), 2.0))
        self.assertIsNone(holdout_rmse(record, spec, 0))
        self.assertAlmostEqual(holdout_rmse(record, spec, 4), 2.0)

class TestExperimentEngine(unittest.TestCase):
    def setUp(self):
        """Fresh output directory and an environment without TNK_ variables"""
        self.tmp = tempfile.TemporaryDirectory()
        self.output_dir = Path(self.tmp.name) / 'results'
        environ = {k: v for k, v in os.environ.items() if not k.startswith('TNK_')}
        self.environ = patch.dict(os.environ, environ, clear=True)
        self.environ.start()

    def tearDown(self):
        self.environ.stop()
        self.tmp.cleanup()

    def make_config(self, **sections):
        env_file = Path(self.tmp.name) / '.env'
        env_file.write_text('')
        config = Config(str(env_file))
        sections.setdefault('run', {})['output_dir'] = str(self.output_dir)
        config.apply(sections)
        return config

    def test_generate_siso4(self):
        config = self.make_config(run={'command': 'gen', 'experiment': 'siso4', 'iterations': 40})
        code, summary = ExperimentEngine(config).generate()
        self.assertEqual(code, 0)
        for name in ('siso4.csv', 'siso4_kernel.tt', 'siso4_params.json'):
            self.assertTrue((self.output_dir / name).exists())
        self.assertEqual(read_record(self.output_dir / 'siso4.csv').samples, 40)
        params = json.loads((self.output_dir / 'siso4_params.json').read_text())
        self.assertEqual(params['samples'], 40)

    def test_generate_mixer_batch(self):
        config = self.make_config(run={'command': 'gen', 'experiment': 'mixer',
                                       'snr_db': [12.0, 26.0], 'batch': True})
        ExperimentEngine(config).generate()
        record = read_record(self.output_dir / 'mixer_batch.csv')
        self.assertEqual(record.l, 2)
        self.assertEqual(record.p, 2)
        np.testing.assert_array_equal(record.y_ref[0], record.y_ref[1])
        params = json.loads((self.output_dir / 'mixer_params.json').read_text())
        self.assertEqual((params['memory'], params['degree'], params['mean_max_rank']), (10, 7, 20))
        self.assertEqual(len(params['noise_variance']), 2)
        self.assertAlmostEqual(params['noise_variance'][0] / params['noise_variance'][1],
                               10 ** 1.4)

    def test_identify_writes_outputs(self):
        ExperimentEngine(self.make_config(
            run={'command': 'gen', 'experiment': 'siso4', 'iterations': 30})).generate()
        config = self.make_config(
            model={'memory': 4, 'degree': 2},
            run={'command': 'identify', 'input_path': str(self.output_dir / 'siso4.csv'),
                 'holdout': 5},
        )
        code, summary = ExperimentEngine(config).identify()
        self.assertEqual(code, 0)
        self.assertEqual(summary['steps'], 25)
        self.assertIsNotNone(summary['holdout_rmse'])
        metrics = pd.read_csv(self.output_dir / 'metrics.csv')
        self.assertEqual(len(metrics), 25)
        self.assertTrue((self.output_dir / 'kernel.tt').exists())
        self.assertTrue((self.output_dir / 'summary.json').exists())

    def test_identify_batch(self):
        ExperimentEngine(self.make_config(
            run={'command': 'gen', 'experiment': 'mixer', 'snr_db': [12.0, 17.0, 26.0],
                 'batch': True})).generate()
        config = self.make_config(
            model={'p': 2, 'memory': 2, 'degree': 2},
            run={'command': 'identify', 'input_path': str(self.output_dir / 'mixer_batch.csv'),
                 'batch': True, 'iterations': 15},
        )
        code, summary = ExperimentEngine(config).identify()
        self.assertEqual(code, 0)
        self.assertEqual(config.model.l, 3)
        self.assertEqual(summary['steps'], 15)

    def test_identify_needs_input(self):
        config = self.make_config(run={'command': 'identify'})
        with self.assertRaises(FileNotFoundError):
            ExperimentEngine(config).identify()

    def test_identify_rejects_size_mismatch(self):
        ExperimentEngine(self.make_config(
            run={'command': 'gen', 'experiment': 'siso4', 'iterations': 10})).generate()
        config = self.make_config(
            model={'p': 2},
            run={'command': 'identify', 'input_path': str(self.output_dir / 'siso4.csv')},
        )
        with self.assertRaises(ValueError):
            ExperimentEngine(config).identify()

    def test_compare_exit_codes(self):
        exact = self.make_config(model={'memory': 2, 'degree': 2},
                                 run={'command': 'compare', 'iterations': 15})
        code, summary = ExperimentEngine(exact).compare()
        self.assertEqual(code, 0)
        self.assertTrue(summary['passed'])
        self.assertTrue((self.output_dir / 'compare.csv').exists())

        coarse = self.make_config(model={'memory': 2, 'degree': 2}, filter={'tolerance': 0.5},
                                  run={'command': 'compare', 'iterations': 15})
        code, summary = ExperimentEngine(coarse).compare()
        self.assertEqual(code, 1)
        self.assertFalse(summary['passed'])

    def test_compare_rejects_input_mismatch(self):
        ExperimentEngine(self.make_config(
            run={'command': 'gen', 'experiment': 'siso4', 'iterations': 10})).generate()
        config = self.make_config(
            model={'p': 2, 'memory': 2, 'degree': 2},
            run={'command': 'compare', 'input_path': str(self.output_dir / 'siso4.csv')},
        )
        with self.assertRaises(ValueError):
            ExperimentEngine(config).compare()

    def test_identify_mean_budget_and_status(self):
        ExperimentEngine(self.make_config(
            run={'command': 'gen', 'experiment': 'siso4', 'iterations': 20})).generate()
        config = self.make_config(
            filter={'tolerance': 0.1, 'mean_max_rank': 1},
            run={'command': 'identify', 'input_path': str(self.output_dir / 'siso4.csv'),
                 'status': True},
        )
        engine = ExperimentEngine(config)
        self.assertEqual(engine._policy().for_mean(), RoundingPolicy(tolerance=0.1, max_rank=1))
        with patch('src.monitor.performance.rank_status') as status:
            code, summary = engine.identify()
        self.assertEqual(code, 0)
        self.assertEqual(summary['max_rank_mean'], [1, 1, 1])
        labels = [call.args[0] for call in status.call_args_list]
        self.assertEqual(labels, ['Mean', 'Covariance'])

    def test_bench(self):
        config = self.make_config(run={'command': 'bench', 'degrees': [2, 3, 4],
                                       'bench_n': 3, 'bench_steps': 3})
        code, summary = ExperimentEngine(config).bench()
        self.assertEqual(code, 0)
        self.assertEqual(len(summary['rows']), 3)
        self.assertIn('r2', summary['fit'])
        self.assertTrue((self.output_dir / 'bench_summary.json').exists())

if __name__ == '__main__':
    unittest.main()

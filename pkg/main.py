import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional

from tabulate import tabulate
import pandas as pd

from config.config import Config
from experiments.engine import ExperimentEngine
from src.monitor.logger import Logger
from src.utils.console import blue_status, cyan_status, green_success, magenta_warning, red_error
from src.utils.errors import SizeGuardError

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='tn-kalman',
        description='Tensor-train Kalman filter experiments for Volterra system identification'
    )
    subparsers = parser.add_subparsers(dest='command', required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON configuration file')
    common.add_argument('--seed', type=int)
    common.add_argument('--output-dir', dest='output_dir')
    common.add_argument('--log-level', dest='log_level',
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'])

    filtering = argparse.ArgumentParser(add_help=False)
    filtering.add_argument('--p', type=int, help='Number of inputs')
    filtering.add_argument('--l', type=int, help='Number of outputs')
    filtering.add_argument('--memory', type=int)
    filtering.add_argument('--degree', type=int)
    filtering.add_argument('--variance', type=float, help='Initial coefficient variance')
    filtering.add_argument('--r-diag', dest='r_diag', type=float, nargs='+')
    filtering.add_argument('--tolerance', type=float, help='Relative rounding tolerance')
    filtering.add_argument('--max-rank', dest='max_rank', type=int)
    filtering.add_argument('--mean-tolerance', dest='mean_tolerance', type=float,
                           help='Rounding tolerance for the mean only')
    filtering.add_argument('--mean-max-rank', dest='mean_max_rank', type=int,
                           help='Rank cap for the mean only')
    filtering.add_argument('--explicit-a', dest='explicit_a', action='store_true',
                           help='Contract with A = I instead of skipping the prediction')
    filtering.add_argument('--process-variance', dest='process_variance', type=float,
                           help='Random-walk variance q, Q = q I')
    filtering.add_argument('--iterations', type=int)
    filtering.add_argument('--input', dest='input_path')

    gen = subparsers.add_parser('gen', parents=[common], help='Generate experiment data')
    gen.add_argument('--experiment', choices=['siso4', 'mixer'])
    gen.add_argument('--snr', dest='snr_db', type=float, nargs='+')
    gen.add_argument('--samples', dest='iterations', type=int)
    gen.add_argument('--batch', action='store_true', default=None,
                     help='Stack all SNRs into one record with one output each')

    ident = subparsers.add_parser('identify', parents=[common, filtering],
                                  help='Identify a Volterra kernel')
    ident.add_argument('--truth', dest='truth_path', help='True kernel container')
    ident.add_argument('--holdout', type=int, help='Samples held out for simulation')
    ident.add_argument('--batch', action='store_true', default=None,
                       help='Filter every output of the record in one batched run')
    ident.add_argument('--status', action='store_true', default=None,
                       help='Print final ranks, storage and error')

    compare = subparsers.add_parser('compare', parents=[common, filtering],
                                    help='Dense vs tensor-train filter')
    compare.add_argument('--bound', type=float)

    bench = subparsers.add_parser('bench', parents=[common], help='Step-time sweep over degrees')
    bench.add_argument('--degrees', type=int, nargs='+')
    bench.add_argument('--n', dest='bench_n', type=int)
    bench.add_argument('--steps', dest='bench_steps', type=int)
    bench.add_argument('--tolerance', type=float)
    bench.add_argument('--max-rank', dest='max_rank', type=int)

    return parser

def overrides_from_args(args: argparse.Namespace) -> Dict[str, Dict]:
    """Map parsed flags onto configuration sections"""
    values = vars(args)
    explicit_a = values.get('explicit_a')
    sections = {
        'model': {k: values.get(k) for k in ('p', 'l', 'memory', 'degree')},
        'filter': {k: values.get(k) for k in ('variance', 'r_diag', 'tolerance', 'max_rank',
                                              'mean_tolerance', 'mean_max_rank',
                                              'process_variance')},
        'run': {k: values.get(k) for k in ('command', 'experiment', 'seed', 'iterations',
                                           'snr_db', 'holdout', 'bound', 'degrees', 'bench_n',
                                           'bench_steps', 'batch', 'status', 'input_path',
                                           'truth_path', 'output_dir')},
        'log': {'level': values.get('log_level')},
    }
    if explicit_a:
        sections['filter']['identity_a'] = False
    return sections

def print_table(rows: List[Dict]):
    frame = pd.DataFrame(rows)
    print(tabulate(frame, headers='keys', tablefmt='fancy_grid', showindex=False))

def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    try:
        config = Config()
        if args.config:
            config.apply_file(args.config)
        config.apply(overrides_from_args(args))
    except (ValueError, OSError) as e:
        red_error(f"Invalid configuration: {e}")
        return EXIT_USAGE

    is_valid, message = config.validate()
    if not is_valid:
        red_error(f"Invalid configuration: {message}")
        return EXIT_USAGE

    log_path = Path(config.log.file_path)
    logger = Logger(log_file=log_path.name, log_dir=str(log_path.parent),
                    console_level=config.log.level, file_level=config.log.file_level)
    logger.log(f"Running {config.run.command}", level='info', config=config.to_dict())
    cyan_status(f"Running {config.run.command}...")

    engine = ExperimentEngine(config, app_logger=logger)
    handlers = {
        'gen': engine.generate,
        'identify': engine.identify,
        'compare': engine.compare,
        'bench': engine.bench,
    }

    try:
        code, summary = handlers[config.run.command]()
    except SizeGuardError as e:
        logger.log_error(e, {'context': config.run.command})
        red_error(str(e))
        return EXIT_USAGE
    except Exception as e:
        logger.log_error(e, {'context': config.run.command})
        red_error(f"{config.run.command} failed: {e}")
        return EXIT_FAILED

    if config.run.command == 'bench':
        print_table(summary['rows'])
        if 'fit' in summary:
            blue_status(f"Linear fit of step time vs d: R^2 = {summary['fit']['r2']:.3f}")
    if code == EXIT_OK:
        green_success(f"{config.run.command} finished")
    else:
        magenta_warning(f"{config.run.command} finished outside the acceptance bound")
    print(json.dumps(summary, default=str, sort_keys=True))
    return code

if __name__ == '__main__':
    sys.exit(main())

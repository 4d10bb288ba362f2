import os
import json
from dataclasses import dataclass, field, fields, asdict
from typing import Any, Dict, List, Optional, Tuple
from dotenv import load_dotenv

ENV_PREFIX = 'TNK_'

@dataclass
class ModelConfig:
    """Volterra model sizes"""
    p: int = 1          # Inputs
    l: int = 1          # Outputs
    memory: int = 4     # Memory length M
    degree: int = 4     # Degree d

    @property
    def n(self) -> int:
        return self.p * self.memory + 1

@dataclass
class FilterConfig:
    """Kalman filter and rounding parameters"""
    variance: float = 1000.0                # Initial coefficient variance
    r_diag: List[float] = field(default_factory=lambda: [1e-2])
    tolerance: float = 0.0                  # Relative rounding tolerance
    max_rank: Optional[int] = None
    mean_tolerance: Optional[float] = None  # Mean budget, tolerance when unset
    mean_max_rank: Optional[int] = None
    identity_a: bool = True                 # Skip the A contraction
    process_variance: float = 0.0           # 0 means Q = 0

@dataclass
class RunConfig:
    """Command parameters"""
    command: str = 'identify'
    experiment: str = 'siso4'               # siso4 or mixer
    seed: int = 0
    iterations: Optional[int] = None
    snr_db: List[float] = field(default_factory=lambda: [12.0])
    holdout: int = 0
    bound: float = 1e-8                     # Deviation bound for compare
    degrees: List[int] = field(default_factory=lambda: [2, 3, 4, 5, 6, 7, 8])
    bench_n: int = 3
    bench_steps: int = 20
    batch: bool = False
    status: bool = False                    # Console rank/error lines after identify
    input_path: Optional[str] = None
    truth_path: Optional[str] = None
    output_dir: str = 'results'

@dataclass
class LogConfig:
    """Logging configuration"""
    level: str = "INFO"              # Console level
    file_path: str = "logs/tn_kalman.log"
    file_level: str = "DEBUG"

def _parse_list(raw: str, kind=float) -> list:
    return [kind(item) for item in raw.split(',') if item.strip()]

def _parse_bool(raw: str) -> bool:
    return raw.strip().lower() in ('1', 'true', 'yes', 'on')

def _env(name: str) -> Optional[str]:
    return os.getenv(ENV_PREFIX + name)

class Config:
    """Layered configuration: defaults, then environment, then JSON file, then flags"""

    SECTIONS = ('model', 'filter', 'run', 'log')

    def __init__(self, env_file: Optional[str] = None):
        """Initialize configuration from defaults and environment

        Args:
            env_file: Optional .env file; the default lookup of python-dotenv otherwise
        """
        load_dotenv(env_file)

        self.model = self._load_model_config()
        self.filter = self._load_filter_config()
        self.run = self._load_run_config()
        self.log = self._load_log_config()

    def _load_model_config(self) -> ModelConfig:
        """Load model sizes from environment"""
        defaults = ModelConfig()
        return ModelConfig(
            p=int(_env('P') or defaults.p),
            l=int(_env('L') or defaults.l),
            memory=int(_env('MEMORY') or defaults.memory),
            degree=int(_env('DEGREE') or defaults.degree)
        )

    def _load_filter_config(self) -> FilterConfig:
        """Load filter parameters from environment"""
        defaults = FilterConfig()
        max_rank = _env('MAX_RANK')
        mean_tolerance = _env('MEAN_TOLERANCE')
        mean_max_rank = _env('MEAN_MAX_RANK')
        identity_a = _env('IDENTITY_A')
        return FilterConfig(
            variance=float(_env('VARIANCE') or defaults.variance),
            r_diag=_parse_list(_env('R_DIAG')) if _env('R_DIAG') else defaults.r_diag,
            tolerance=float(_env('TOLERANCE') or defaults.tolerance),
            max_rank=int(max_rank) if max_rank else None,
            mean_tolerance=float(mean_tolerance) if mean_tolerance else None,
            mean_max_rank=int(mean_max_rank) if mean_max_rank else None,
            identity_a=_parse_bool(identity_a) if identity_a else defaults.identity_a,
            process_variance=float(_env('PROCESS_VARIANCE') or defaults.process_variance)
        )

    def _load_run_config(self) -> RunConfig:
        """Load run parameters from environment"""
        defaults = RunConfig()
        iterations = _env('ITERATIONS')
        return RunConfig(
            seed=int(_env('SEED') or defaults.seed),
            iterations=int(iterations) if iterations else None,
            output_dir=_env('OUTPUT_DIR') or defaults.output_dir
        )

    def _load_log_config(self) -> LogConfig:
        defaults = LogConfig()
        return LogConfig(
            level=(_env('LOG_LEVEL') or defaults.level).upper(),
            file_path=_env('LOG_FILE') or defaults.file_path
        )

    def apply(self, overrides: Dict[str, Dict[str, Any]]):
        """Overwrite fields section by section; None values are ignored

        Raises:
            ValueError: Unknown section or field
        """
        for section, values in overrides.items():
            if section not in self.SECTIONS:
                raise ValueError(f"Unknown configuration section '{section}'")
            target = getattr(self, section)
            known = {f.name for f in fields(target)}
            for key, value in values.items():
                if key not in known:
                    raise ValueError(f"Unknown field '{key}' in section '{section}'")
                if value is not None:
                    setattr(target, key, value)

    def apply_file(self, path: str):
        """Merge a JSON file of the form {"model": {...}, "filter": {...}, ...}"""
        with open(path, 'r') as handle:
            data = json.load(handle)
        if not isinstance(data, dict):
            raise ValueError(f"Configuration file {path} must hold a JSON object")
        self.apply(data)

    def to_dict(self) -> Dict[str, Dict[str, Any]]:
        return {section: asdict(getattr(self, section)) for section in self.SECTIONS}

    def validate(self) -> Tuple[bool, str]:
        """Validate configuration settings

        Returns:
            tuple: (is_valid, error_message)
        """
        try:
            m, f, r = self.model, self.filter, self.run

            for name in ('p', 'l', 'memory', 'degree'):
                if int(getattr(m, name)) < 1:
                    return False, f"Model size '{name}' must be >= 1"

            if not f.variance > 0:
                return False, "Initial variance must be positive"
            if len(f.r_diag) not in (1, m.l):
                return False, f"r_diag needs 1 or {m.l} entries, got {len(f.r_diag)}"
            if not all(value > 0 for value in f.r_diag):
                return False, "Measurement variances must be positive"
            if not f.tolerance >= 0:
                return False, "Rounding tolerance must be >= 0"
            if f.max_rank is not None and f.max_rank < 1:
                return False, "max_rank must be >= 1"
            if f.mean_tolerance is not None and not f.mean_tolerance >= 0:
                return False, "Mean rounding tolerance must be >= 0"
            if f.mean_max_rank is not None and f.mean_max_rank < 1:
                return False, "mean_max_rank must be >= 1"
            if not f.process_variance >= 0:
                return False, "Process variance must be >= 0"

            if r.command not in ('gen', 'identify', 'compare', 'bench'):
                return False, f"Unknown command '{r.command}'"
            if r.experiment not in ('siso4', 'mixer'):
                return False, f"Unknown experiment '{r.experiment}'"
            if not 0 <= r.seed < 2 ** 64:
                return False, "Seed must be a non-negative 64-bit integer"
            if r.iterations is not None and r.iterations < 1:
                return False, "Iteration count must be >= 1"
            if r.holdout < 0:
                return False, "Holdout must be >= 0"
            if not r.bound > 0:
                return False, "Deviation bound must be positive"
            if not r.degrees or min(r.degrees) < 1:
                return False, "Benchmark degrees must be >= 1"
            if r.bench_n < 1 or r.bench_steps < 1:
                return False, "Benchmark n and step count must be >= 1"

            if self.log.level not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
                return False, f"Invalid log level '{self.log.level}'"

            return True, "Configuration validated"

        except Exception as e:
            return False, f"Validation error: {str(e)}"

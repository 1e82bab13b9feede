#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Configuration for the X-VFL Simulator

Module-level defaults plus the YAML run-config loader used by the CLI.
"""

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import yaml

from .errors import ConfigError

logger = logging.getLogger(__name__)


@dataclass
class DataDefaults:
    """Synthetic desk-scale task"""

    N_SAMPLES: int = 2000
    N_FEATURES: int = 16
    N_CLASSES: int = 4
    N_CLIENTS: int = 2
    SEPARATION: float = 3.0
    TEST_FRACTION: float = 0.2
    OVERLAP_RATIO: float = 0.4
    MISSING_RATE: float = 0.5

    # Value written into masked feature positions
    SENTINEL: float = 0.0


@dataclass
class ModelDefaults:
    """Network shapes"""

    EMBED_DIM: int = 32
    BOTTOM_HIDDEN: tuple = (32, 32)  # three linear layers
    TOP_HIDDEN: tuple = (32, 32)


@dataclass
class TrainDefaults:
    """Optimizer and objective defaults"""

    LAMBDA1: float = 0.01
    LAMBDA2: float = 0.01
    LEARNING_RATE: float = 0.05
    STEPS: int = 2000
    BATCH_SIZE_TWO_CLIENTS: int = 50
    BATCH_SIZE_MANY_CLIENTS: int = 100

    # Number of checkpoints kept over a run (cadence max(1, T // 20))
    CHECKPOINTS_PER_RUN: int = 20

    # Constant estimation sample sizes
    SMOOTHNESS_PAIRS: int = 32
    NOISE_SAMPLES: int = 64
    PILOT_STEPS: int = 100

    def batch_size_for(self, n_clients: int) -> int:
        """Default batch size for a client count"""
        if n_clients >= 4:
            return self.BATCH_SIZE_MANY_CLIENTS
        return self.BATCH_SIZE_TWO_CLIENTS


@dataclass
class SweepDefaults:
    """Experiment grids"""

    MISSING_GRID: tuple = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0)
    MULTI_CLIENT_MISSING_GRID: tuple = (0.0, 0.3, 0.5, 0.7, 1.0)
    OVERLAP_GRID: tuple = (0.2, 0.4, 0.8)
    IMBALANCE_FRACTIONS: tuple = (0.8, 0.2)
    FIXED_MISSING_RATE: float = 0.5
    N_SEEDS: int = 5
    METHODS: tuple = ("xvfl", "standalone", "vanilla_vfl")


@dataclass
class ConvergenceDefaults:
    """Convergence-rate study on the noisy quadratic control"""

    T_EXPONENTS: tuple = (7, 8, 9, 10, 11, 12, 13)
    N_SEEDS: int = 10
    TARGET_EPS_SQ: float = 1e-3
    DIM: int = 10
    SIGMA_SQ: float = 10.0
    PAGE_EPS: float = 0.01
    POOL_SIZE: int = 65536


@dataclass
class RuntimeDefaults:
    """Process-level settings"""

    DEFAULT_LOG_LEVEL: str = "INFO"
    DEFAULT_OUT_DIR: str = "output/xvfl"
    DEFAULT_THREADS: int = 1
    DEFAULT_SEED: int = 0
    LOG_FORMAT: str = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


# Global instances
DATA = DataDefaults()
MODEL = ModelDefaults()
TRAIN = TrainDefaults()
SWEEP = SweepDefaults()
CONVERGENCE = ConvergenceDefaults()
RUNTIME = RuntimeDefaults()


# ---------------------------------------------------------------------------
# Run configuration sections
# ---------------------------------------------------------------------------

@dataclass
class DataSection:
    source: str = "synthetic"  # 'synthetic' or 'csv'
    csv_path: Optional[str] = None
    label_column: str = "label"
    categorical_columns: List[str] = field(default_factory=list)
    n_samples: int = DATA.N_SAMPLES
    n_features: int = DATA.N_FEATURES
    n_classes: int = DATA.N_CLASSES
    n_clients: int = DATA.N_CLIENTS
    separation: float = DATA.SEPARATION
    feature_fractions: Optional[List[float]] = None
    test_fraction: float = DATA.TEST_FRACTION
    overlap_ratio: float = DATA.OVERLAP_RATIO
    missing_rate: float = DATA.MISSING_RATE
    imbalance: Optional[List[float]] = None

    def validate(self):
        if self.source not in ("synthetic", "csv"):
            raise ConfigError(f"data.source must be 'synthetic' or 'csv', got {self.source!r}")
        if self.source == "csv" and not self.csv_path:
            raise ConfigError("data.csv_path is required when data.source is 'csv'")
        for name in ("n_samples", "n_features", "n_classes", "n_clients"):
            if getattr(self, name) < 1:
                raise ConfigError(f"data.{name} must be >= 1")
        if self.n_clients > self.n_features:
            raise ConfigError(
                f"data.n_clients ({self.n_clients}) exceeds data.n_features ({self.n_features})"
            )
        for name in ("test_fraction", "overlap_ratio", "missing_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"data.{name} must be in [0, 1], got {value}")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("data.test_fraction must be strictly between 0 and 1")
        if self.feature_fractions is not None and len(self.feature_fractions) != self.n_clients:
            raise ConfigError("data.feature_fractions needs one entry per client")
        if self.imbalance is not None and len(self.imbalance) != self.n_clients:
            raise ConfigError("data.imbalance needs one entry per client")


@dataclass
class ModelSection:
    embed_dim: int = MODEL.EMBED_DIM
    bottom_hidden: List[int] = field(default_factory=lambda: list(MODEL.BOTTOM_HIDDEN))
    top_hidden: List[int] = field(default_factory=lambda: list(MODEL.TOP_HIDDEN))
    xcom_hidden: Optional[List[int]] = None  # None -> [embed_dim]

    def validate(self):
        if self.embed_dim < 1:
            raise ConfigError("model.embed_dim must be >= 1")
        for name in ("bottom_hidden", "top_hidden", "xcom_hidden"):
            widths = getattr(self, name)
            if widths is not None and any(int(w) < 1 for w in widths):
                raise ConfigError(f"model.{name} widths must be >= 1")


@dataclass
class LossSection:
    lambda1: float = TRAIN.LAMBDA1
    lambda2: float = TRAIN.LAMBDA2
    xcom_self_input: bool = False

    def validate(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("loss.lambda1 and loss.lambda2 must be >= 0")


@dataclass
class OptimizerSection:
    kind: str = "sgd"  # 'sgd' or 'page'
    eta: float = TRAIN.LEARNING_RATE
    steps: int = TRAIN.STEPS
    batch_size: Optional[int] = None  # None -> 50 (k < 4) or 100 (k >= 4)
    auto: bool = False
    target_eps: float = 0.1
    page_b: int = 200
    page_b_prime: Optional[int] = None
    page_p: Optional[float] = None

    def validate(self):
        if self.kind not in ("sgd", "page"):
            raise ConfigError(f"optimizer.kind must be 'sgd' or 'page', got {self.kind!r}")
        if self.eta <= 0:
            raise ConfigError("optimizer.eta must be > 0")
        if self.steps < 0:
            raise ConfigError("optimizer.steps must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("optimizer.batch_size must be >= 1")
        if self.target_eps <= 0:
            raise ConfigError("optimizer.target_eps must be > 0")
        if self.page_p is not None and not 0.0 < self.page_p <= 1.0:
            raise ConfigError("optimizer.page_p must be in (0, 1]")


@dataclass
class SweepSection:
    missing_grid: Optional[List[float]] = None  # None -> grid matching n_clients
    overlap_grid: List[float] = field(default_factory=lambda: list(SWEEP.OVERLAP_GRID))
    imbalance_fractions: List[float] = field(default_factory=lambda: list(SWEEP.IMBALANCE_FRACTIONS))
    fixed_missing_rate: float = SWEEP.FIXED_MISSING_RATE
    seeds: List[int] = field(default_factory=lambda: list(range(SWEEP.N_SEEDS)))
    methods: List[str] = field(default_factory=lambda: list(SWEEP.METHODS))
    gap_missing_rate: Optional[float] = None  # None -> 0.9 (k=2) or 0.7 (k>2)
    lambda_grid: Optional[str] = None  # name of a LAMBDA_GRIDS preset

    def validate(self):
        grids = [self.overlap_grid, self.missing_grid or []]
        for grid in grids:
            if any(not 0.0 <= float(v) <= 1.0 for v in grid):
                raise ConfigError("sweep grids must contain values in [0, 1]")
        if not self.seeds:
            raise ConfigError("sweep.seeds must not be empty")
        unknown = set(self.methods) - set(SWEEP.METHODS)
        if unknown:
            raise ConfigError(f"sweep.methods has unknown entries: {sorted(unknown)}")
        if any(not 0.0 < float(f) <= 1.0 for f in self.imbalance_fractions):
            raise ConfigError("sweep.imbalance_fractions must each be in (0, 1]")


@dataclass
class ConvergenceSection:
    problem: str = "quadratic"  # 'quadratic' or 'xvfl'
    t_exponents: List[int] = field(default_factory=lambda: list(CONVERGENCE.T_EXPONENTS))
    seeds: int = CONVERGENCE.N_SEEDS
    target_eps_sq: float = CONVERGENCE.TARGET_EPS_SQ
    dim: int = CONVERGENCE.DIM
    sigma_sq: float = CONVERGENCE.SIGMA_SQ
    page_eps: float = CONVERGENCE.PAGE_EPS
    optimizers: List[str] = field(default_factory=lambda: ["sgd", "page"])

    def validate(self):
        if self.problem not in ("quadratic", "xvfl"):
            raise ConfigError(f"convergence.problem must be 'quadratic' or 'xvfl', got {self.problem!r}")
        if len(self.t_exponents) < 2:
            raise ConfigError("convergence.t_exponents needs at least two points for a slope")
        if self.seeds < 1:
            raise ConfigError("convergence.seeds must be >= 1")
        if set(self.optimizers) - {"sgd", "page"}:
            raise ConfigError("convergence.optimizers may contain only 'sgd' and 'page'")


@dataclass
class InferenceSection:
    checkpoint: Optional[str] = None
    input_csv: Optional[str] = None
    output_csv: str = "predictions.csv"
    mode: str = "collaborative"  # 'independent', 'independent_with_missing', 'collaborative'
    client: int = 0

    def validate(self):
        if self.mode not in ("independent", "independent_with_missing", "collaborative"):
            raise ConfigError(f"inference.mode is invalid: {self.mode!r}")
        if self.client < 0:
            raise ConfigError("inference.client must be >= 0")


@dataclass
class RuntimeSection:
    seed: int = RUNTIME.DEFAULT_SEED
    out_dir: str = RUNTIME.DEFAULT_OUT_DIR
    threads: int = RUNTIME.DEFAULT_THREADS
    log_level: str = RUNTIME.DEFAULT_LOG_LEVEL

    def validate(self):
        if self.threads < 1:
            raise ConfigError("runtime.threads must be >= 1")
        if self.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR"):
            raise ConfigError(f"runtime.log_level is invalid: {self.log_level!r}")


SECTION_TYPES = {
    "data": DataSection,
    "model": ModelSection,
    "loss": LossSection,
    "optimizer": OptimizerSection,
    "sweep": SweepSection,
    "convergence": ConvergenceSection,
    "inference": InferenceSection,
    "runtime": RuntimeSection,
}


@dataclass
class RunConfig:
    """Resolved configuration of one CLI run"""

    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    optimizer: OptimizerSection = field(default_factory=OptimizerSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    convergence: ConvergenceSection = field(default_factory=ConvergenceSection)
    inference: InferenceSection = field(default_factory=InferenceSection)
    runtime: RuntimeSection = field(default_factory=RuntimeSection)

    def validate(self) -> "RunConfig":
        for name in SECTION_TYPES:
            getattr(self, name).validate()
        if self.inference.client >= self.data.n_clients:
            raise ConfigError("inference.client is not a valid client index")
        return self

    def batch_size(self) -> int:
        """Configured batch size, or the client-count default"""
        if self.optimizer.batch_size is not None:
            return self.optimizer.batch_size
        return TRAIN.batch_size_for(self.data.n_clients)

    def missing_grid(self) -> List[float]:
        if self.sweep.missing_grid is not None:
            return [float(v) for v in self.sweep.missing_grid]
        if self.data.n_clients > 2:
            return list(SWEEP.MULTI_CLIENT_MISSING_GRID)
        return list(SWEEP.MISSING_GRID)

    def gap_missing_rate(self) -> float:
        if self.sweep.gap_missing_rate is not None:
            return float(self.sweep.gap_missing_rate)
        return 0.7 if self.data.n_clients > 2 else 0.9

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def _coerce(section: str, key: str, value: Any, default: Any) -> Any:
    """Check a YAML value against the type of its default"""
    if value is None or default is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{section}.{key} must be a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{section}.{key} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        # YAML 1.1 reads exponent forms such as 1e-4 as strings
        if isinstance(value, str):
            try:
                return float(value)
            except ValueError:
                raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{section}.{key} must be a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{section}.{key} must be a list, got {value!r}")
        return list(value)
    return value


def _apply_section(config: RunConfig, section: str, values: Dict[str, Any]) -> None:
    if section not in SECTION_TYPES:
        raise ConfigError(f"Unknown config section: {section!r}")
    if not isinstance(values, dict):
        raise ConfigError(f"Config section {section!r} must be a mapping")

    current = getattr(config, section)
    known = {f.name for f in dataclasses.fields(current)}
    updates = {}
    for key, value in values.items():
        if key not in known:
            raise ConfigError(f"Unknown config key: {section}.{key}")
        updates[key] = _coerce(section, key, value, getattr(current, key))
    setattr(config, section, dataclasses.replace(current, **updates))


def parse_override(override: str) -> tuple:
    """
    Parse a 'section.key=value' override

    The value is parsed as YAML so numbers, booleans and lists keep their type.
    """
    if "=" not in override or "." not in override.split("=", 1)[0]:
        raise ConfigError(f"Override must look like section.key=value, got {override!r}")
    dotted, raw = override.split("=", 1)
    section, key = dotted.strip().split(".", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigError(f"Cannot parse override value {raw!r}: {e}")
    return section, key, value


def load_run_config(
    path: Optional[str] = None,
    overrides: Sequence[str] = (),
    seed: Optional[int] = None,
    out_dir: Optional[str] = None,
    threads: Optional[int] = None,
) -> RunConfig:
    """
    Load a YAML (or JSON) run config on top of the defaults

    Args:
        path: Config file; None uses the defaults only
        overrides: 'section.key=value' strings applied after the file
        seed: --seed flag
        out_dir: --out-dir flag
        threads: --threads flag

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: Missing file, malformed YAML, unknown keys or bad values
    """
    config = RunConfig()

    if path is not None:
        config_path = Path(path)
        if not config_path.exists():
            raise ConfigError(f"Config file not found: {config_path}")
        try:
            with open(config_path, 'r', encoding='utf-8') as f:
                raw = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Malformed config file {config_path}: {e}")
        if not isinstance(raw, dict):
            raise ConfigError(f"Config file {config_path} must contain a mapping of sections")
        for section, values in raw.items():
            _apply_section(config, section, values or {})
        logger.debug(f"Loaded config from {config_path}")

    for override in overrides:
        section, key, value = parse_override(override)
        _apply_section(config, section, {key: value})

    flags = {}
    if seed is not None:
        flags["seed"] = seed
    if out_dir is not None:
        flags["out_dir"] = out_dir
    if threads is not None:
        flags["threads"] = threads
    if flags:
        _apply_section(config, "runtime", flags)

    return config.validate()


def config_hash(config: RunConfig) -> str:
    """
    Short stable hash of the experiment-defining part of a config

    Output directory, thread count and log level do not change results and are
    left out.
    """
    payload = config.to_dict()
    payload["runtime"] = {"seed": config.runtime.seed}
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]

"""Run configuration defaults and file/environment loading."""

import json
import os
from pathlib import Path

ROOT_DIR = Path(__file__).resolve().parents[2]
try:
    from dotenv import load_dotenv  # type: ignore

    load_dotenv(dotenv_path=ROOT_DIR / ".env")
except ImportError:
    pass

from .errors import ConfigError

DEFAULT_CONFIG_PATH = ROOT_DIR / "config" / "default_config.json"
RESULTS_DIR = Path(os.getenv("FIELDAMORT_RESULTS_DIR", str(ROOT_DIR / "Results")))
DEFAULT_SEED = int(os.getenv("FIELDAMORT_SEED", "0"))
LOG_QUIET = os.getenv("FIELDAMORT_LOG_QUIET", "").lower() in {"1", "true", "yes"}

DATASET_FORMAT_VERSION = "fieldamort-ds-v1"
CHECKPOINT_FORMAT_VERSION = "fieldamort-ckpt-v1"

# Geometry, in units of the source radius
DOMAIN_LO = -3.0
DOMAIN_HI = 3.0
SOURCE_RADIUS = 1.0
MOMENT_SCALE = 1.0

# Data generation
N_COLLECTIONS = 10_000
POINTS_PER_COLLECTION = 32 * 32
VALIDATION_COLLECTIONS = 500
VALIDATION_MIN_SOURCES = 2
VALIDATION_MAX_SOURCES = 6

# Staged Adam schedule
EPOCHS_PER_STAGE = 5000
LOG_LRS = [-3.0, -4.0, -5.0, -6.0]
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
BATCH_COLLECTIONS = 128
DIVERGENCE_FACTOR = 1e6

# Full-size architectures; hypernet width is a multiple of its output size
FOURIER_N_MAX = 32
LAMBDA_MIN = 4.0 * (DOMAIN_HI - DOMAIN_LO)
FCILR_WIDTH = 400
FCILR_DEPTH = 3
FCINR_WIDTH = 20
FCINR_DEPTH = 3
HYPER_WIDTH_FACTOR = {"fourier": 0.25, "fcilr": 1.5, "fcinr": 1.0, "linear": 0.0}
HYPER_DEPTH = {"fourier": 3, "fcilr": 3, "fcinr": 2, "linear": 0}
OUTPUT_SCALE = 0.01

# Overrides applied by --desk-scale
DESK_SCALE = {
    "n_max": 16,
    "trunk_width": 64,
    "inr_width": 16,
    "hyper_width_factor": {"fourier": 0.125, "fcilr": 0.5, "fcinr": 0.5, "linear": 0.0},
    "hyper_max_width": 256,
    "epochs_per_stage": 1500,
    "batch_collections": 64,
    "points_per_step": 256,
}

# Single-collection fit
FIT_WIDTH = 32
FIT_DEPTH = 3
FIT_GRID = 100
FIT_EPOCHS = 20_000
FIT_LOG_LR = -3.0
FIT_N_SOURCES = 3

# Scaling sweep
BENCH_SIZES = [256, 512, 1024, 2048]
BENCH_REPEATS = 3


def load_config(path: "str | Path" = DEFAULT_CONFIG_PATH) -> dict:
    """Load the JSON run configuration."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            cfg = json.load(f)
    except FileNotFoundError:
        raise ConfigError("", f"configuration file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError("", f"invalid JSON in configuration file {path}: {e}")
    if not isinstance(cfg, dict):
        raise ConfigError("", f"configuration root must be an object: {path}")
    return cfg


def section(cfg: dict, name: str) -> dict:
    value = cfg.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(name, "must be an object")
    return value


def check_keys(values: dict, allowed: set, prefix: str) -> None:
    unknown = sorted(set(values) - allowed)
    if unknown:
        raise ConfigError(f"{prefix}.{unknown[0]}", "unknown key")


def positive_int(values: dict, key: str, default: int, prefix: str) -> int:
    v = values.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int) or v <= 0:
        raise ConfigError(f"{prefix}.{key}", f"must be a positive integer, got {v!r}")
    return v


def positive_float(values: dict, key: str, default: float, prefix: str) -> float:
    v = values.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not v > 0:
        raise ConfigError(f"{prefix}.{key}", f"must be a positive number, got {v!r}")
    return float(v)


def choice(values: dict, key: str, default: str, allowed: tuple, prefix: str) -> str:
    v = values.get(key, default)
    if v not in allowed:
        raise ConfigError(f"{prefix}.{key}", f"must be one of {', '.join(allowed)}, got {v!r}")
    return v

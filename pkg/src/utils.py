import os
import logging
from typing import Optional

import numpy as np
import torch


SEED_ENV_VAR = "TRC_SEED"


class ConfigError(ValueError):
    """Invalid configuration value, unknown key, or unsatisfiable layout."""


class DimensionError(ValueError):
    """Array or parameter vector with the wrong shape."""


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


class CheckpointError(ValueError):
    """Corrupt or incompatible checkpoint file."""

    def __init__(self, field: str, message: str):
        super().__init__(f"checkpoint field '{field}': {message}")
        self.field = field


class NonFiniteError(FloatingPointError):
    """A loss, gradient or solver intermediate stopped being finite."""

    def __init__(self, what: str, diagnostics: Optional[dict] = None):
        details = ""
        if diagnostics:
            details = " (" + ", ".join(f"{k}={v}" for k, v in diagnostics.items()) + ")"
        super().__init__(f"non-finite {what}{details}")
        self.what = what
        self.diagnostics = diagnostics or {}


def ensure_results_dir(results_dir: str) -> str:
    """Ensure results directory exists and return absolute path."""
    abs_path = os.path.abspath(os.path.expanduser(results_dir))
    os.makedirs(abs_path, exist_ok=True)
    return abs_path


def setup_logging(log_level: str = "INFO", results_dir: str = ".") -> None:
    """Set up logging configuration."""
    log_file_path = os.path.join(results_dir, 'trc.log')
    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=[
            logging.StreamHandler(),
            logging.FileHandler(log_file_path)
        ],
        force=True,
    )


def resolve_seed(config_seed: int) -> int:
    """Return the run seed, letting TRC_SEED override the configured one."""
    raw = os.environ.get(SEED_ENV_VAR)
    if raw is None or raw.strip() == "":
        return config_seed
    try:
        seed = int(raw)
    except ValueError as e:
        raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got '{raw}'") from e
    if seed < 0:
        raise ConfigError(f"{SEED_ENV_VAR} must be nonnegative, got {seed}")
    logging.getLogger(__name__).info(f"Seed overridden by {SEED_ENV_VAR}: {seed}")
    return seed


def require_finite(name: str, value, **diagnostics) -> None:
    """Raise NonFiniteError if a tensor, array or scalar holds inf/nan."""
    if isinstance(value, torch.Tensor):
        ok = bool(torch.isfinite(value).all())
    else:
        ok = bool(np.all(np.isfinite(value)))
    if not ok:
        raise NonFiniteError(name, diagnostics)

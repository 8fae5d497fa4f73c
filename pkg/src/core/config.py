"""
Configuration loading for SliceSim
JSON documents validated against the pydantic schema.
"""

import os
import json
import hashlib
import logging
from pathlib import Path
from typing import Union

from dotenv import load_dotenv
from pydantic import ValidationError

from src.core.schema import SliceSimConfig
from src.core.errors import ConfigError


logger = logging.getLogger("SliceSim.Config")

THREADS_ENV_VAR = "SLICESIM_THREADS"

# Shipped configuration documents
CONFIG_DIR = Path(__file__).resolve().parents[2] / "configs"
DEFAULT_CONFIG_PATH = CONFIG_DIR / "default.json"


def load_config(path: Union[str, Path]) -> SliceSimConfig:
    """
    Load and validate a configuration document.

    Raises:
        ConfigError: when the file is missing, is not JSON, or fails validation.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from e
    try:
        config = SliceSimConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: schema validation failed\n{e}") from e
    logger.info(f"📄 Loaded config {path} (hash {config_hash(config)[:12]})")
    return config


def canonical_json(config: SliceSimConfig) -> str:
    """Sorted-key JSON dump used for hashing and for copies in output folders."""
    return json.dumps(config.model_dump(mode="json"), sort_keys=True, indent=2)


def config_hash(config: SliceSimConfig) -> str:
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


def apply_ablation(config: SliceSimConfig) -> SliceSimConfig:
    """Plain MAPPO: remove every explainability term from reward and loss."""
    update = config.model_copy(deep=True)
    update.train.alpha_xrl = 0.0
    update.utility.w_xrl = 0.0
    return update


def thread_cap(default: int) -> int:
    """Worker-thread cap from SLICESIM_THREADS (environment or .env)."""
    load_dotenv()
    raw = os.getenv(THREADS_ENV_VAR)
    if not raw:
        return default
    try:
        value = int(raw)
    except ValueError:
        logger.warning(f"Ignoring non-integer {THREADS_ENV_VAR}={raw!r}")
        return default
    return max(1, value)

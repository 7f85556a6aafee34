"""
Configuration Helper Functions for verispec

This module loads `.env` files, reads environment variables, parses JSON/YAML
configuration files and configures root logging for the entry points.
"""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Union

import yaml
from dotenv import load_dotenv

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
CONFIG_ENV_VAR = "VERISPEC_CONFIG"
LOG_LEVEL_ENV_VAR = "VERISPEC_LOG_LEVEL"


def load_environment(dotenv_path: Optional[Union[str, Path]] = None) -> bool:
    """Load a `.env` file into the process environment; existing variables win."""
    return load_dotenv(dotenv_path=dotenv_path, override=False)


def get_env(name: str, default: Optional[str] = None) -> Optional[str]:
    value = os.getenv(name)
    return value if value else default


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Read a JSON or YAML configuration file.

    Args:
        path: `.json`, `.yaml` or `.yml` file

    Returns:
        The parsed mapping (empty for an empty YAML file)

    Raises:
        ValueError: unsupported extension or a document that is not a mapping
        OSError: the file cannot be read
    """
    path = Path(path)
    suffix = path.suffix.lower()
    with open(path, "r", encoding="utf-8") as f:
        if suffix == ".json":
            data = json.load(f)
        elif suffix in (".yaml", ".yml"):
            try:
                data = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ValueError(f"Invalid YAML in {path}: {e}") from e
        else:
            raise ValueError(f"Unsupported config file type: {path.name}")
    if not isinstance(data, dict):
        raise ValueError(f"Config file {path} must contain a mapping at the top level")
    logger.debug(f"Read config file {path}")
    return data


def default_config_path() -> Optional[Path]:
    value = get_env(CONFIG_ENV_VAR)
    return Path(value) if value else None


def resolve_log_level(flag_value: Optional[str] = None) -> str:
    """Flag first, then VERISPEC_LOG_LEVEL, then INFO."""
    level = flag_value or get_env(LOG_LEVEL_ENV_VAR) or "INFO"
    return level.upper()


def setup_logging(level: str = "INFO") -> None:
    logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO), format=LOG_FORMAT, force=True)

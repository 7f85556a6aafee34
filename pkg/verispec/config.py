"""
Configuration models for verispec.

A run is configured by one `Config`: model defaults, then a JSON/YAML file
(named by --config or VERISPEC_CONFIG), then command-line flags. Unknown keys
are rejected at every level.
"""

import logging
from pathlib import Path
from typing import Any, Dict, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from utils.config_helpers import default_config_path, read_config_file

from .corpus import CorpusParams
from .errors import ConfigError
from .evalbench import BenchParams
from .labelgen import LossConfig
from .specdec import AcceptanceParams

logger = logging.getLogger(__name__)


class PathsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    corpus_dir: str = "data/corpus"
    vocab: str = "artifacts/vocab.json"
    model: str = "artifacts/ngram.model"
    dataset: str = "artifacts/dataset.jsonl"
    report: str = "artifacts/report.json"
    prompts: Optional[str] = None
    medusa_model: Optional[str] = None


class TokenizerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    vocab_size: int = Field(1024, ge=261)


class LabelsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    heads: int = Field(10, ge=1)
    loss: LossConfig = LossConfig()


class RefModelConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    n: int = Field(3, ge=1)
    heads: int = Field(10, ge=0)
    alpha: float = Field(0.01, ge=0.0)
    latency_ms: float = Field(0.0, ge=0.0)
    labels: Literal["syntax", "medusa"] = "syntax"


class Config(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    paths: PathsConfig = PathsConfig()
    tokenizer: TokenizerConfig = TokenizerConfig()
    labels: LabelsConfig = LabelsConfig()
    refmodel: RefModelConfig = RefModelConfig()
    acceptance: AcceptanceParams = AcceptanceParams()
    corpus: CorpusParams = CorpusParams()
    bench: BenchParams = BenchParams()
    seed: int = 0
    workers: int = Field(1, ge=1)
    log_level: str = "INFO"


def inherit_workers(data: Dict[str, Any]) -> Dict[str, Any]:
    """Copy the top-level worker count into the bench section unless it sets its own."""
    workers = data.get("workers")
    bench = data.get("bench")
    if workers is None or (isinstance(bench, dict) and bench.get("workers") is not None):
        return data
    merged = dict(data)
    merged["bench"] = {**(bench if isinstance(bench, dict) else {}), "workers": workers}
    return merged


def deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """Recursively merge overrides into a copy of base; None values are skipped."""
    merged = dict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None) -> Config:
    """
    Resolve the run configuration.

    Args:
        path: Config file; falls back to VERISPEC_CONFIG when None
        overrides: Nested mapping of flag values (None entries ignored)

    Returns:
        Validated Config

    Raises:
        ConfigError: unreadable file, unknown keys or invalid values
    """
    source = Path(path) if path else default_config_path()
    data: Dict[str, Any] = {}
    if source is not None:
        try:
            data = read_config_file(source)
        except FileNotFoundError as e:
            raise ConfigError(f"config file not found: {source}") from e
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read config file {source}: {e}") from e
    merged = inherit_workers(deep_merge(data, overrides or {}))
    try:
        config = Config.model_validate(merged)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e}") from e
    logger.debug(f"Loaded configuration from {source or 'defaults'}")
    return config

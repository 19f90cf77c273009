"""Configuration loader for NOON scans with YAML line diagnostics, validation, and environment overrides."""

import os
import yaml
import json
import hashlib
import logging
from typing import Dict, Any, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from src.noon_errors import ConfigError
from src.noon_types import (
    DEFAULT_MAX_PHOTONS,
    DetectionScheme,
    ScanConfig,
    SourceSpec,
    ValidatedBundle,
    check_dark_count,
    check_efficiency,
    validate,
)

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = "config/noon_config.yaml"

# Sections and keys every configuration file must spell out; analysis and limits have defaults
REQUIRED_CONFIG_KEYS = {
    "source": ["omega0", "delta_omega", "mu", "rep_rate"],
    "scan": ["mode", "eta", "dc", "integration_time", "coarse", "fine"],
}

ENV_TO_CONFIG_MAP = {
    "NOON_MU": "source.mu",
    "NOON_ETA": "scan.eta",
    "NOON_DC": "scan.dc",
    "NOON_MODE": "scan.mode",
    "NOON_PATH_MULTIPLIER": "scan.path_multiplier",
    "NOON_MAX_PHOTONS": "limits.max_photons",
}


class GridSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    start: float = Field(allow_inf_nan=False)
    step: float = Field(gt=0, allow_inf_nan=False)
    count: int = Field(ge=2)


class ScanSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    mode: Literal["coarse", "fine"]
    eta: float
    dc: float
    integration_time: float = Field(gt=0)
    path_multiplier: float = Field(default=1.0, gt=0)
    coarse: GridSection
    fine: GridSection

    @field_validator("eta")
    @classmethod
    def _check_eta(cls, value: float) -> float:
        return check_efficiency(value)

    @field_validator("dc")
    @classmethod
    def _check_dc(cls, value: float) -> float:
        return check_dark_count(value)


class AnalysisSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    symmetric_tolerance: float = Field(default=0.15, gt=0, lt=1)
    baseline_fraction: float = Field(default=0.1, gt=0, le=0.5)


class LimitsSection(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    max_photons: int = Field(default=DEFAULT_MAX_PHOTONS, ge=1, le=10)


class NoonConfig(BaseModel):
    """Effective run configuration (file contents plus environment overrides)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    source: SourceSpec
    scan: ScanSection
    analysis: AnalysisSection = AnalysisSection()
    limits: LimitsSection = LimitsSection()

    def scan_config(self, mode: Optional[str] = None) -> ScanConfig:
        """Build the ScanConfig for ``mode`` (defaults to ``scan.mode``)."""
        mode = mode or self.scan.mode
        grid = self.scan.coarse if mode == "coarse" else self.scan.fine
        return ScanConfig(
            mode=mode,
            start=grid.start,
            step=grid.step,
            count=grid.count,
            eta=self.scan.eta,
            dc=self.scan.dc,
            integration_time=self.scan.integration_time,
            path_multiplier=self.scan.path_multiplier,
        )

    def bundle(self, scheme: Any, mode: Optional[str] = None) -> ValidatedBundle:
        return validate(self.source, scheme, self.scan_config(mode), max_photons=self.limits.max_photons)

    def scheme(self, text: str) -> DetectionScheme:
        return DetectionScheme.parse(text, max_photons=self.limits.max_photons)


def _load_config_from_file(config_path: str) -> Tuple[Dict[str, Any], Dict[Tuple[str, ...], int]]:
    """Load YAML plus a map from key paths to 1-based line numbers."""
    with open(config_path, "r", encoding="utf-8") as f:
        text = f.read()
    try:
        raw = yaml.safe_load(text)
        lines = _line_index(yaml.compose(text))
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"line {mark.line + 1}" if mark is not None else "unknown line"
        raise ConfigError(f"malformed YAML in {config_path}", [f"{where}: {getattr(exc, 'problem', exc)}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(f"configuration root in {config_path} must be a mapping")
    return raw, lines


def _line_index(node: Any, path: Tuple[str, ...] = ()) -> Dict[Tuple[str, ...], int]:
    index: Dict[Tuple[str, ...], int] = {}
    if isinstance(node, yaml.MappingNode):
        for key_node, value_node in node.value:
            key_path = path + (str(key_node.value),)
            index[key_path] = key_node.start_mark.line + 1
            index.update(_line_index(value_node, key_path))
    return index


def _load_config_from_env() -> Optional[str]:
    """Check if NOON_CONFIG environment variable is set."""
    return os.getenv("NOON_CONFIG")


def _line_for(location: Tuple[str, ...], lines: Dict[Tuple[str, ...], int]) -> Optional[int]:
    for cut in range(len(location), 0, -1):
        if location[:cut] in lines:
            return lines[location[:cut]]
    return None


def _validate_config(config: Dict[str, Any], lines: Dict[Tuple[str, ...], int]) -> List[str]:
    """List missing required sections and keys, with the nearest line number."""
    problems = []
    for section, keys in REQUIRED_CONFIG_KEYS.items():
        if section not in config:
            problems.append(f"line 1: missing required configuration section: {section}")
            continue
        body = config[section] or {}
        if not isinstance(body, dict):
            problems.append(f"line {lines.get((section,), 1)}: {section} must be a mapping")
            continue
        for key in keys:
            if key not in body:
                problems.append(f"line {lines.get((section,), 1)}: missing required configuration key: {section}.{key}")
    return problems


def _apply_env_overrides(config: Dict[str, Any]) -> Dict[str, Any]:
    """Apply environment variable overrides; pydantic coerces the string values."""
    for env_var, config_path in ENV_TO_CONFIG_MAP.items():
        if env_var in os.environ:
            value = os.environ[env_var]
            logger.info(f"Config override {env_var}={value} -> {config_path}")
            keys = config_path.split(".")
            current = config
            for key in keys[:-1]:
                if not isinstance(current.get(key), dict):
                    current[key] = {}
                current = current[key]
            current[keys[-1]] = value
    return config


def _schema_errors(exc: ValidationError, lines: Dict[Tuple[str, ...], int]) -> List[str]:
    problems = []
    for error in exc.errors():
        location = tuple(str(part) for part in error["loc"])
        message = error["msg"]
        if message.startswith("Value error, "):
            message = message[len("Value error, "):]
        line = _line_for(location, lines)
        where = f"line {line}" if line is not None else "environment"
        problems.append(f"{where}: {'.'.join(location)}: {message}")
    return problems


def load_config(config_path: Optional[str] = None) -> NoonConfig:
    """Load and validate a configuration file, applying environment overrides.

    Args:
        config_path: Explicit path; falls back to ``NOON_CONFIG`` and then the default file.

    Raises:
        FileNotFoundError: when the file does not exist.
        ConfigError: listing every schema violation with its line number.
    """
    config_path = config_path or _load_config_from_env() or DEFAULT_CONFIG_PATH
    if not os.path.exists(config_path):
        raise FileNotFoundError(f"Configuration file not found: {config_path}")

    raw, lines = _load_config_from_file(config_path)
    problems = _validate_config(raw, lines)
    if problems:
        raise ConfigError(f"invalid configuration {config_path}", problems)

    raw = _apply_env_overrides(raw)
    try:
        config = NoonConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"invalid configuration {config_path}", _schema_errors(exc, lines)) from None

    logger.debug(f"Loaded configuration {config_path} (sha {config_sha(config)[:12]})")
    return config


def config_sha(config: NoonConfig) -> str:
    """Compute SHA256 hash of the effective config."""
    json_str = json.dumps(config.model_dump(mode="json"), sort_keys=True, default=str)
    return hashlib.sha256(json_str.encode("utf-8")).hexdigest()


# Cache the loaded configuration per resolved path
_config_cache: Dict[str, NoonConfig] = {}


def get_config(config_path: Optional[str] = None) -> NoonConfig:
    """Get the configuration with environment overrides applied, cached per path."""
    resolved = os.path.abspath(config_path or _load_config_from_env() or DEFAULT_CONFIG_PATH)
    if resolved not in _config_cache:
        _config_cache[resolved] = load_config(resolved)
    return _config_cache[resolved]


def get_config_sha(config_path: Optional[str] = None) -> str:
    """Get the SHA256 hash of the effective configuration."""
    return config_sha(get_config(config_path))


def clear_config_cache() -> None:
    _config_cache.clear()

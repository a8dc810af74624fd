"""Application settings and audit configuration management."""

from __future__ import annotations

import hashlib
import os
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from app.core.errors import ConfigError
from services.feature_schema import FeatureSchemaConfig
from services.learners.selection import HyperGrid


BASE_DIR = Path(__file__).resolve().parents[2]
load_dotenv(BASE_DIR / ".env")

FormatName = Literal["online", "residential"]
AlgorithmName = Literal["LR", "GBT"]


class Settings(BaseModel):
    """Typed settings loaded from environment variables."""

    app_name: str = Field(default="fairdrop")
    environment: str = Field(
        default_factory=lambda: os.getenv("FAIRDROP_ENVIRONMENT", "local"),
        description="Deployment stage",
    )
    log_level: str = Field(
        default_factory=lambda: os.getenv("FAIRDROP_LOG_LEVEL", "INFO")
    )
    workers: int = Field(
        default_factory=lambda: int(os.getenv("FAIRDROP_WORKERS", "4")), ge=1
    )
    output_dir: Path = Field(
        default_factory=lambda: Path(os.getenv("FAIRDROP_OUTPUT_DIR", "out"))
    )
    template_dir: Path = Field(
        default=Path(__file__).resolve().parents[1] / "templates",
        description="Report templates directory",
    )

    model_config = ConfigDict(frozen=True)


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    """Cached settings accessor."""
    try:
        return Settings()
    except (ValidationError, ValueError) as exc:
        raise ConfigError(f"Invalid application settings: {exc}") from exc


class CsvSource(BaseModel):
    """Student and course CSV files for one format."""

    students: Path
    courses: Path

    model_config = ConfigDict(extra="forbid", frozen=True)


class DataConfig(BaseModel):
    """Where cohort tables come from: the synthetic generator or CSV files."""

    source: Literal["synth", "csv"] = "synth"
    n: Optional[int] = Field(
        default=None, gt=0, description="Synthetic population size per format"
    )
    profile_overrides: Dict[str, Dict[str, Any]] = Field(
        default_factory=dict,
        description="Per-format PopulationProfile field overrides",
    )
    csv: Dict[str, CsvSource] = Field(default_factory=dict)

    model_config = ConfigDict(extra="forbid", frozen=True)


class AuditConfig(BaseModel):
    """Everything run_audit needs; one seed drives every random stream."""

    seed: int
    formats: List[FormatName] = Field(default_factory=lambda: ["online", "residential"])
    algorithms: List[AlgorithmName] = Field(default_factory=lambda: ["GBT", "LR"])
    test_cohort: int = 2018
    data: DataConfig = Field(default_factory=DataConfig)
    features: FeatureSchemaConfig = Field(default_factory=FeatureSchemaConfig)
    grids: HyperGrid = Field(default_factory=HyperGrid)
    cv_folds: int = Field(default=5, ge=2)
    histogram_bins: int = Field(default=20, ge=2)
    ranking_bins: int = Field(default=40, ge=2)
    confidence_level: float = Field(default=0.95, gt=0.0, lt=1.0)
    workers: Optional[int] = Field(default=None, ge=1)
    output_dir: Optional[Path] = None

    model_config = ConfigDict(extra="forbid", frozen=True)

    @model_validator(mode="after")
    def _check_sources(self) -> "AuditConfig":
        if not self.formats:
            raise ValueError("at least one format is required")
        if not self.algorithms:
            raise ValueError("at least one algorithm is required")
        if len(set(self.formats)) != len(self.formats):
            raise ValueError("formats must be unique")
        if len(set(self.algorithms)) != len(self.algorithms):
            raise ValueError("algorithms must be unique")
        if self.data.source == "csv":
            missing = [fmt for fmt in self.formats if fmt not in self.data.csv]
            if missing:
                raise ValueError(f"csv paths missing for formats: {missing}")
        return self

    def stream_seed(self, name: str) -> int:
        return derive_seed(self.seed, name)


def derive_seed(seed: int, name: str) -> int:
    """Stable 32-bit seed for a named random sub-stream."""
    digest = hashlib.blake2b(f"{seed}/{name}".encode(), digest_size=4).digest()
    return int.from_bytes(digest, "big")


def load_audit_config(path: Path | str) -> AuditConfig:
    """Read an audit configuration from a YAML file."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"Cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"Config {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"Config {path} must be a mapping")
    try:
        config = AuditConfig.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(f"Invalid audit config {path}: {exc}") from exc
    # relative CSV paths are resolved against the config file
    if config.data.source == "csv":
        resolved = {
            fmt: CsvSource(
                students=(path.parent / src.students).resolve(),
                courses=(path.parent / src.courses).resolve(),
            )
            for fmt, src in config.data.csv.items()
        }
        config = config.model_copy(
            update={"data": config.data.model_copy(update={"csv": resolved})}
        )
    return config

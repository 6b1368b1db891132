"""Configuration settings for the quasirand toolkit."""

import logging
import os

from pydantic import field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):

    PROJECT_NAME: str = "quasirand"
    DEBUG: bool = False

    # Reproducibility; QUASIRAND_SEED overrides --seed when set
    SEED: int | None = None
    THREADS: int | None = None

    # Solver defaults
    TOL_SCORE: float = 1e-8
    MAX_ITER: int = 100
    MAX_HALVINGS: int = 20
    RIDGE: float = 0.0

    # Inference
    CONDITION_LIMIT: float = 1e12
    CI_LEVEL: float = 0.95

    HIST_BINS: int = 30

    # Random instances per method in the score-gradient check
    GRADIENT_INSTANCES: int = 100

    # Logging settings
    LOG_LEVEL: str = "INFO"

    @field_validator("LOG_LEVEL")
    @classmethod
    def validate_log_level(cls, v: str) -> str:
        level = v.upper()
        if not isinstance(logging.getLevelName(level), int):
            raise ValueError(f"Unknown log level: {v}")
        return level

    @field_validator("THREADS")
    @classmethod
    def validate_threads(cls, v: int | None) -> int | None:
        if v is not None and v < 1:
            raise ValueError("THREADS must be at least 1")
        return v

    @property
    def worker_count(self) -> int:
        """Worker count used by the Monte Carlo engine."""
        return self.THREADS or os.cpu_count() or 1

    model_config = SettingsConfigDict(
        env_prefix="QUASIRAND_",
        env_file=".env",
        case_sensitive=True,
        extra="ignore",
    )


settings = Settings()

from pathlib import Path

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class HarnessSettings(BaseSettings):
    """Harness settings that are set using environment variables (NPJIVE_*)."""

    model_config = SettingsConfigDict(env_prefix="NPJIVE_")

    # Default number of sweep worker processes, -1 uses every core
    workers: int = 1
    log_level: str = "INFO"
    out_dir: Path = Path("out")
    # printf-style format for floats in every CSV the harness writes
    float_format: str = "%.17g"

    @field_validator("log_level", mode="before")
    def normalize_log_level(cls, log_level: str) -> str:
        level = str(log_level).upper()
        if level not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"unknown log level {log_level}")
        return level

    @field_validator("workers")
    def check_workers(cls, workers: int) -> int:
        if workers == 0 or workers < -1:
            raise ValueError("workers must be positive or -1")
        return workers


def get_settings() -> HarnessSettings:
    return HarnessSettings()

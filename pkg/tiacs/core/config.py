from __future__ import annotations

from typing import Literal, Optional

from pydantic import Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    app_name: str = Field(default="tiacs", alias="APP_NAME")
    log_level: str = Field(default="INFO", alias="LOG_LEVEL")
    log_format: Literal["json", "text"] = Field(default="json", alias="LOG_FORMAT")

    # overrides RunConfig.workers when set
    workers: Optional[int] = Field(default=None, ge=1, alias="TIACS_WORKERS")
    cache_dir: Optional[str] = Field(default=None, alias="TIACS_CACHE_DIR")

    proximity_radius_m: float = Field(default=3000.0, gt=0, alias="TIACS_PROXIMITY_RADIUS_M")

    # only used when a run has no routed trip to derive statistics from
    fallback_speed_kmh: float = Field(default=30.0, gt=0, alias="TIACS_FALLBACK_SPEED_KMH")
    fallback_detour: float = Field(default=1.3, ge=1.0, alias="TIACS_FALLBACK_DETOUR")

    @field_validator("log_level", mode="before")
    @classmethod
    def _upper_level(cls, v: object) -> str:
        return str(v or "INFO").strip().upper()

    @field_validator("workers", mode="before")
    @classmethod
    def _blank_workers(cls, v: object) -> object:
        if isinstance(v, str) and not v.strip():
            return None
        return v


def get_settings() -> Settings:
    """Fresh settings read from the environment (tests monkeypatch env vars)."""
    return Settings()


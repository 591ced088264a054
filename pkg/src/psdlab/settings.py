"""Process-level settings read from the environment.

  PSDLAB_LOG_LEVEL=INFO
  PSDLAB_JOBS=1
  PSDLAB_METRICS_TEXTFILE=/var/lib/node_exporter/psdlab.prom
  PSDLAB_OUTPUT_ROOT=runs
"""

from pathlib import Path

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="PSDLAB_", env_file=".env", extra="ignore")

    log_level: str = "INFO"
    # Parallel sweep cells
    jobs: int = 1
    # Prometheus textfile written after each command (unset = disabled)
    metrics_textfile: Path | None = None
    # Default parent for run directories when neither --out nor the config sets one
    output_root: Path = Path("runs")


def get_settings() -> Settings:
    return Settings()

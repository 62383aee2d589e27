# neural_statistician/core/config.py
"""
Process-level settings and logging setup.

- Loads .env from the project root using python-dotenv.
- Reads NSTAT_* variables from the environment; real environment variables win over .env.
- Exposes a module-level `settings` instance.
"""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv
from pydantic_settings import BaseSettings, SettingsConfigDict

# Compute project root: neural_statistician/core/config.py -> core -> package -> project root
PROJECT_ROOT = Path(__file__).resolve().parents[2]
ENV_PATH = PROJECT_ROOT / ".env"

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="NSTAT_", extra="ignore")

    data_dir: Path = PROJECT_ROOT / "data"
    log_level: str = "INFO"
    mnist_base_url: str = "https://storage.googleapis.com/cvdf-datasets/mnist/"
    http_timeout: float = 30.0


def load_settings(env_path: Path = ENV_PATH) -> Settings:
    load_dotenv(dotenv_path=env_path)
    return Settings()


settings = load_settings()


def configure_logging(level: Optional[str] = None) -> None:
    """Install a single stream handler at the requested (or configured) level, replacing earlier ones."""
    name = (level or settings.log_level).upper()
    logging.basicConfig(level=getattr(logging, name, logging.INFO), format=LOG_FORMAT, force=True)

"""Process settings read from the environment and an optional .env file."""
import os
from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict

BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="JAPE_", env_file=os.path.join(BASE_DIR, ".env"),
                                      extra="ignore")

    output_dir: str = os.path.join(BASE_DIR, "reports")
    database_path: str = os.path.join(BASE_DIR, "campaigns.db")
    workers: int = 1
    log_level: str = "INFO"
    default_scenario: str = os.path.join(BASE_DIR, "app", "data", "default_scenario.json")


@lru_cache()
def get_settings() -> Settings:
    return Settings()

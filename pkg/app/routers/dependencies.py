"""Dependencies for routers - shared settings and the default scenario."""
import json
import logging
import os
from functools import lru_cache

from app.schemas import ScenarioConfig
from app.settings import Settings, get_settings

logger = logging.getLogger(__name__)


class ServiceContainer:
    """Container for shared state - loaded once per process."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._instance._initialized = False
        return cls._instance

    def __init__(self):
        if self._initialized:
            return

        self._settings = get_settings()
        os.makedirs(self._settings.output_dir, exist_ok=True)
        self._default_config = load_default_config(self._settings.default_scenario)
        logger.info("📁 Reports directory: %s", self._settings.output_dir)

        self._initialized = True

    @property
    def settings(self) -> Settings:
        return self._settings

    @property
    def default_config(self) -> ScenarioConfig:
        return self._default_config

    @property
    def output_dir(self) -> str:
        return self._settings.output_dir

    def campaign_dir(self, campaign_id: int) -> str:
        return os.path.join(self._settings.output_dir, f"campaign_{campaign_id:04d}")


def load_default_config(path: str) -> ScenarioConfig:
    """Scenario shipped with the service, or the built-in defaults when the file is missing."""
    if not os.path.exists(path):
        logger.warning("Default scenario %s not found, using built-in defaults", path)
        return ScenarioConfig()
    with open(path, "r", encoding="utf-8") as f:
        return ScenarioConfig.model_validate(json.load(f))


@lru_cache()
def get_services() -> ServiceContainer:
    """Get the service container singleton."""
    return ServiceContainer()

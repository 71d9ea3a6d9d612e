"""API Routers Package - Organizes all API endpoints into modular routers."""
from .scenarios import router as scenarios_router
from .campaigns import router as campaigns_router

__all__ = [
    "scenarios_router",
    "campaigns_router",
]

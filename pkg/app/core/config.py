"""
Configuration settings using Pydantic Settings
"""

import logging
from typing import List
from functools import lru_cache

from pydantic_settings import BaseSettings


__version__ = "1.0.0"


class Settings(BaseSettings):
    """Application settings"""

    # API Settings
    API_V1_STR: str = "/api/v1"

    # CORS Settings - simplified to avoid parsing issues
    ALLOWED_ORIGINS_STR: str = "http://localhost:3000,http://localhost:5173"
    ALLOWED_HOSTS: List[str] = ["localhost", "127.0.0.1", "testserver", "*"]

    @property
    def ALLOWED_ORIGINS(self) -> List[str]:
        """Parse ALLOWED_ORIGINS from string"""
        if not self.ALLOWED_ORIGINS_STR:
            return []
        return [origin.strip() for origin in self.ALLOWED_ORIGINS_STR.split(",")]

    # Estimation defaults
    KERNEL_FAMILY: str = "epanechnikov"
    DEGENERATE_G_TOLERANCE: float = 1e-12
    DELTA_GRID_POINTS: int = 101

    # Cross-validation
    CV_DELTA0: float = 500.0
    CV_CANDIDATE_COUNT: int = 20
    CV_SKIP_FRACTION_LIMIT: float = 0.2

    # Bootstrap
    BOOTSTRAP_REPLICATES: int = 200
    BOOTSTRAP_TARGET_BLOCKS: int = 24

    # Field simulation
    CHOLESKY_JITTER_START: float = 1e-10
    CHOLESKY_JITTER_MAX: float = 1e-6

    # Parallel workers for replicate loops (1 = serial)
    WORKERS: int = 1

    # Data-calibrated simulation: Matern truth, bandwidth runs and block length L*
    CALIBRATED_PHI: float = 120.0
    CALIBRATED_KAPPA: float = 1.5
    CALIBRATED_BANDWIDTHS: List[float] = [120.0, 200.0]
    CALIBRATED_BLOCK_LENGTH: float = 10000.0
    CALIBRATED_DELTA_MAX: float = 600.0
    CALIBRATED_REPLICATIONS: int = 200

    # Development Settings
    DEBUG: bool = False
    LOG_LEVEL: str = "INFO"

    class Config:
        env_file = ".env"
        case_sensitive = True


@lru_cache()
def get_settings() -> Settings:
    """Get application settings"""
    return Settings()


def configure_logging(level: str = None) -> None:
    """Configure the root logger; diagnostics go to stderr"""
    logging.basicConfig(
        level=(level or get_settings().LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


# Create settings instance
settings = get_settings()

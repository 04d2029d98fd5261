import logging
import os
from typing import Optional

from dotenv import load_dotenv

from .exceptions import ConfigurationError

load_dotenv()

_LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


class Config:
    _instance: Optional['Config'] = None

    def __new__(cls) -> 'Config':
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self):
        if hasattr(self, '_initialized'):
            return
        self._initialized = True
        self._validate_environment()

    # Storage
    @property
    def cache_dir(self) -> str:
        return os.getenv("TBQMMM_CACHE_DIR", "./data/coefficient_cache")

    @property
    def output_dir(self) -> str:
        return os.getenv("TBQMMM_OUTPUT_DIR", "./results")

    @property
    def iteration_log_path(self) -> str:
        return os.getenv("TBQMMM_ITERATION_LOG", "./data/iteration_log.jsonl")

    # Execution
    @property
    def threads(self) -> int:
        return int(os.getenv("TBQMMM_THREADS", "1"))

    @property
    def log_level(self) -> str:
        return os.getenv("TBQMMM_LOG_LEVEL", "INFO").upper()

    # Tracking
    @property
    def mlflow_tracking_uri(self) -> Optional[str]:
        return os.getenv("MLFLOW_TRACKING_URI") or None

    @property
    def mlflow_experiment_name(self) -> str:
        return os.getenv("MLFLOW_EXPERIMENT_NAME", "tbqmmm-convergence")

    # Numerical defaults shared by every experiment
    @property
    def default_fd_step(self) -> float:
        return 1e-4

    @property
    def default_drop_tol(self) -> float:
        return 1e-10

    @property
    def degeneracy_tol(self) -> float:
        return 1e-8

    def _validate_environment(self) -> None:
        """Validate the types of the optional environment variables."""
        threads = os.getenv("TBQMMM_THREADS", "1")
        if not threads.isdigit() or int(threads) < 1:
            raise ConfigurationError(f"TBQMMM_THREADS must be a positive integer, got {threads!r}")

        level = os.getenv("TBQMMM_LOG_LEVEL", "INFO").upper()
        if level not in _LOG_LEVELS:
            raise ConfigurationError(f"TBQMMM_LOG_LEVEL must be one of {', '.join(_LOG_LEVELS)}, got {level!r}")

    def configure_logging(self, level: Optional[str] = None) -> None:
        """Configure the root logger; called once by the CLI."""
        logging.basicConfig(
            level=getattr(logging, (level or self.log_level).upper()),
            format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        )


# Global config instance
config = Config()

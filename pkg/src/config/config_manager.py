"""
Configuration Manager for the cross-diffusion toolkit.

Loads process-level settings (logging, output locations, thread count,
solver tolerances) from environment variables and provides centralized
access to them throughout the application.
"""

import os
from pathlib import Path
from typing import Optional
from dotenv import load_dotenv


class ConfigManager:
    """Manages application configuration from environment variables."""

    def __init__(self, env_file: Optional[str] = None):
        """
        Initialize configuration manager.

        Args:
            env_file: Optional path to .env file. If None, uses default .env in project root.
        """
        # Load environment variables
        if env_file:
            load_dotenv(env_file)
        else:
            # Try to find .env in project root
            project_root = Path(__file__).parent.parent.parent
            env_path = project_root / ".env"
            if env_path.exists():
                load_dotenv(env_path)

        # Validate configuration values
        self._validate_config()

    def _validate_config(self) -> None:
        """Validate that configured values are well-formed."""
        threads = os.getenv("CROSSDIFF_THREADS", "1")
        if not threads.isdigit() or int(threads) < 1:
            raise ValueError(
                f"Invalid CROSSDIFF_THREADS={threads!r}: expected a positive integer. "
                f"Please check your .env file."
            )

        for name in ("LOG_MAX_BYTES", "LOG_BACKUP_COUNT"):
            value = os.getenv(name, "0")
            if not value.isdigit():
                raise ValueError(
                    f"Invalid {name}={value!r}: expected a nonnegative integer. "
                    f"Please check your .env file."
                )

        tol = os.getenv("CROSSDIFF_LINEAR_TOL", "1e-10")
        try:
            tol_value = float(tol)
        except ValueError:
            tol_value = -1.0
        if not tol_value > 0:
            raise ValueError(
                f"Invalid CROSSDIFF_LINEAR_TOL={tol!r}: expected a positive number. "
                f"Please check your .env file."
            )

    # Execution Configuration
    @property
    def threads(self) -> int:
        """Maximum number of sweep entries run concurrently."""
        return int(os.getenv("CROSSDIFF_THREADS", "1"))

    @property
    def linear_tol(self) -> float:
        """Default relative residual tolerance for sparse linear solves."""
        return float(os.getenv("CROSSDIFF_LINEAR_TOL", "1e-10"))

    # Storage Paths
    @property
    def results_dir(self) -> Path:
        """Default directory for experiment artifacts."""
        project_root = Path(__file__).parent.parent.parent
        path = Path(os.getenv("RESULTS_DIR", "data/results"))
        if not path.is_absolute():
            path = project_root / path
        path.mkdir(parents=True, exist_ok=True)
        return path

    @property
    def presets_dir(self) -> Optional[Path]:
        """Optional directory with additional JSON presets."""
        presets = os.getenv("CROSSDIFF_PRESETS_DIR")
        if presets:
            return Path(presets)
        return None

    # Logging Configuration
    @property
    def log_level(self) -> str:
        """Logging level (DEBUG, INFO, WARNING, ERROR, CRITICAL)."""
        return os.getenv("LOG_LEVEL", "INFO").upper()

    @property
    def log_file(self) -> Optional[Path]:
        """Log file path."""
        log_file_str = os.getenv("LOG_FILE")
        if log_file_str:
            project_root = Path(__file__).parent.parent.parent
            path = Path(log_file_str)
            if not path.is_absolute():
                path = project_root / path
            path.parent.mkdir(parents=True, exist_ok=True)
            return path
        return None

    @property
    def log_max_bytes(self) -> int:
        """Size in bytes at which LOG_FILE is rotated (0 disables rotation)."""
        return int(os.getenv("LOG_MAX_BYTES", str(10 * 1024 * 1024)))

    @property
    def log_backup_count(self) -> int:
        """Number of rotated log files kept."""
        return int(os.getenv("LOG_BACKUP_COUNT", "3"))

    def __repr__(self) -> str:
        """String representation of configuration."""
        return (
            f"ConfigManager("
            f"threads={self.threads}, "
            f"linear_tol={self.linear_tol}, "
            f"log_level={self.log_level})"
        )


# Global configuration instance
_config: Optional[ConfigManager] = None


def get_config() -> ConfigManager:
    """
    Get the global configuration instance.

    Returns:
        ConfigManager instance
    """
    global _config
    if _config is None:
        _config = ConfigManager()
    return _config


def reset_config() -> None:
    """Reset the global configuration instance (mainly for testing)."""
    global _config
    _config = None

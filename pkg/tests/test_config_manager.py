"""
Unit tests for ConfigManager.
"""

import pytest

from src.config.config_manager import ConfigManager, get_config, reset_config


class TestConfigManager:
    """Test cases for environment configuration."""

    def test_defaults(self, monkeypatch):
        monkeypatch.delenv("LOG_LEVEL", raising=False)
        config = ConfigManager()

        assert config.threads == 1
        assert config.linear_tol == 1e-10
        assert config.presets_dir is None
        assert config.log_level == "INFO"

    def test_results_dir_created(self, tmp_path):
        """RESULTS_DIR points at the per-test directory and is created on access."""
        config = ConfigManager()

        assert config.results_dir == tmp_path / "results"
        assert config.results_dir.is_dir()

    def test_threads(self, monkeypatch):
        monkeypatch.setenv("CROSSDIFF_THREADS", "4")
        assert ConfigManager().threads == 4

    @pytest.mark.parametrize("value", ["0", "-2", "two"])
    def test_invalid_threads(self, monkeypatch, value):
        monkeypatch.setenv("CROSSDIFF_THREADS", value)
        with pytest.raises(ValueError, match="CROSSDIFF_THREADS"):
            ConfigManager()

    @pytest.mark.parametrize("value", ["0", "-1e-8", "tight"])
    def test_invalid_linear_tol(self, monkeypatch, value):
        monkeypatch.setenv("CROSSDIFF_LINEAR_TOL", value)
        with pytest.raises(ValueError, match="CROSSDIFF_LINEAR_TOL"):
            ConfigManager()

    def test_log_level_upper(self, monkeypatch):
        monkeypatch.setenv("LOG_LEVEL", "debug")
        assert ConfigManager().log_level == "DEBUG"

    def test_log_file(self, tmp_path, monkeypatch):
        monkeypatch.setenv("LOG_FILE", str(tmp_path / "logs" / "run.log"))
        path = ConfigManager().log_file

        assert path == tmp_path / "logs" / "run.log"
        assert path.parent.is_dir()

    def test_log_rotation(self, monkeypatch):
        monkeypatch.setenv("LOG_MAX_BYTES", "4096")
        monkeypatch.setenv("LOG_BACKUP_COUNT", "5")
        config = ConfigManager()

        assert config.log_max_bytes == 4096
        assert config.log_backup_count == 5

    def test_invalid_log_rotation(self, monkeypatch):
        monkeypatch.setenv("LOG_BACKUP_COUNT", "-1")
        with pytest.raises(ValueError, match="LOG_BACKUP_COUNT"):
            ConfigManager()

    def test_env_file(self, tmp_path, monkeypatch):
        """Values from an explicit .env file are loaded."""
        monkeypatch.setenv("CROSSDIFF_THREADS", "1")
        monkeypatch.delenv("CROSSDIFF_THREADS")
        env_file = tmp_path / "custom.env"
        env_file.write_text("CROSSDIFF_THREADS=3\n")

        assert ConfigManager(str(env_file)).threads == 3

    def test_global_instance(self):
        first = get_config()
        assert get_config() is first

        reset_config()
        assert get_config() is not first

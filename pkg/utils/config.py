import json
import os
from typing import Dict, Any
from dataclasses import dataclass
from pathlib import Path


@dataclass
class SolverConfig:
    """Numerical defaults shared by all solvers"""
    workers: int = 4  # threads for row-block assembly and study levels
    assembly_block_rows: int = 32

    lag_cache_mb: int = 1024  # memory for cached lag matrices and volume spectra

    # Reference oracle
    max_oracle_panels: int = 2000
    max_oracle_steps: int = 400

    # Elliptic solve
    cg_rtol: float = 1e-10
    cg_max_iterations: int = 100000


@dataclass
class OutputConfig:
    """Result file configuration"""
    directory: str = "data/results"
    float_format: str = "%.17g"
    write_manifest: bool = True


@dataclass
class LoggingConfig:
    """Logging configuration"""
    level: str = "INFO"
    file_path: str = "data/logs/heatsim.log"
    max_file_size: int = 10485760  # 10MB
    backup_count: int = 5
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class ConfigManager:
    """Centralized settings manager"""

    SECTIONS = ('solver', 'output', 'logging')

    def __init__(self, config_file: str = "data/config.json"):
        self.config_file = Path(config_file)
        if not self.config_file.is_absolute():
            self.config_file = Path(__file__).parent.parent / self.config_file

        self.solver = SolverConfig()
        self.output = OutputConfig()
        self.logging = LoggingConfig()

        self.load_config()
        self.load_environment_variables()

    def load_config(self) -> None:
        """Load settings from the JSON file, creating it with defaults if missing"""
        if not self.config_file.exists():
            self.save_config()
            return

        try:
            with open(self.config_file, 'r', encoding='utf-8') as f:
                config_data = json.load(f)

            for section in self.SECTIONS:
                if section in config_data:
                    self._update_dataclass(getattr(self, section), config_data[section])

        except (json.JSONDecodeError, FileNotFoundError, KeyError) as e:
            print(f"Error loading configuration: {e}")
            print("Using default configuration")

    def load_environment_variables(self) -> None:
        """Apply environment overrides"""
        if os.getenv("HEATSIM_WORKERS"):
            self.solver.workers = max(1, int(os.getenv("HEATSIM_WORKERS")))

        if os.getenv("HEATSIM_LAG_CACHE_MB"):
            self.solver.lag_cache_mb = int(os.getenv("HEATSIM_LAG_CACHE_MB"))

        if os.getenv("HEATSIM_OUTPUT_DIR"):
            self.output.directory = os.getenv("HEATSIM_OUTPUT_DIR")

        level = os.getenv("HEATSIM_LOG_LEVEL") or os.getenv("LOG_LEVEL")
        if level:
            self.logging.level = level

        if os.getenv("DEBUG_MODE"):
            self.logging.level = "DEBUG"

    def save_config(self) -> None:
        """Save current settings to the JSON file"""
        try:
            self.config_file.parent.mkdir(parents=True, exist_ok=True)
            with open(self.config_file, 'w', encoding='utf-8') as f:
                json.dump(self.get_config_dict(), f, indent=2, ensure_ascii=False)
        except OSError as e:
            print(f"Error saving configuration: {e}")

    def update_config(self, section: str, updates: Dict[str, Any]) -> None:
        """Update a specific settings section"""
        if section not in self.SECTIONS:
            raise ValueError(f"Unknown configuration section: {section}")
        self._update_dataclass(getattr(self, section), updates)

    def get_config_dict(self) -> Dict[str, Any]:
        """Get all settings as dictionary"""
        return {
            section: self._dataclass_to_dict(getattr(self, section))
            for section in self.SECTIONS
        }

    def get_full_output_dir(self) -> Path:
        """Get the absolute result directory"""
        return self._resolve(self.output.directory)

    def get_full_log_path(self) -> Path:
        """Get full log file path"""
        return self._resolve(self.logging.file_path)

    def _resolve(self, path: str) -> Path:
        candidate = Path(path)
        if candidate.is_absolute():
            return candidate
        return Path(__file__).parent.parent / candidate

    def _update_dataclass(self, dataclass_instance, updates: Dict[str, Any]) -> None:
        """Update a dataclass with new values"""
        for key, value in updates.items():
            if hasattr(dataclass_instance, key):
                setattr(dataclass_instance, key, value)

    def _dataclass_to_dict(self, dataclass_instance) -> Dict[str, Any]:
        """Convert a dataclass to dictionary"""
        return {
            field: getattr(dataclass_instance, field)
            for field in dataclass_instance.__dataclass_fields__
        }


# Global configuration manager instance
config_manager = ConfigManager()


def get_config() -> ConfigManager:
    """Get the global configuration manager instance"""
    return config_manager


def reload_config() -> None:
    """Reload configuration from file"""
    global config_manager
    config_manager.load_config()
    config_manager.load_environment_variables()

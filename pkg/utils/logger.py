import logging
import sys
import threading
import time
import traceback
import uuid
from datetime import datetime, timezone
from logging.handlers import RotatingFileHandler
from typing import Optional, Dict, Any

from .config import get_config


class SimulationLogger:
    """Structured logger for solver runs"""

    def __init__(self, name: str = "heatsim"):
        self.name = name
        self.logger = logging.getLogger(name)
        self.config = get_config()
        self.run_id = uuid.uuid4().hex[:8]

        # Avoid duplicating handlers
        if not self.logger.handlers:
            self._setup_logger()

    def _setup_logger(self) -> None:
        """Configure logger with file and console handlers"""
        level = getattr(logging, self.config.logging.level.upper(), logging.INFO)
        self.logger.setLevel(level)
        self.logger.propagate = False

        formatter = logging.Formatter(
            self.config.logging.format,
            datefmt='%Y-%m-%d %H:%M:%S'
        )

        try:
            log_path = self.config.get_full_log_path()
            log_path.parent.mkdir(parents=True, exist_ok=True)
            file_handler = RotatingFileHandler(
                log_path,
                maxBytes=self.config.logging.max_file_size,
                backupCount=self.config.logging.backup_count,
                encoding='utf-8'
            )
            file_handler.setFormatter(formatter)
            file_handler.setLevel(level)
            self.logger.addHandler(file_handler)
        except OSError:
            # read-only checkout: console only
            pass

        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setFormatter(formatter)
        console_handler.setLevel(level)
        self.logger.addHandler(console_handler)

    def debug(self, message: str, /, **kwargs) -> None:
        """Log DEBUG level"""
        self._log_with_context(logging.DEBUG, message, **kwargs)

    def info(self, message: str, /, **kwargs) -> None:
        """Log INFO level"""
        self._log_with_context(logging.INFO, message, **kwargs)

    def warning(self, message: str, /, **kwargs) -> None:
        """Log WARNING level"""
        self._log_with_context(logging.WARNING, message, **kwargs)

    def error(self, message: str, /, **kwargs) -> None:
        """Log ERROR level"""
        self._log_with_context(logging.ERROR, message, **kwargs)

    def critical(self, message: str, /, **kwargs) -> None:
        """Log CRITICAL level"""
        self._log_with_context(logging.CRITICAL, message, **kwargs)

    def exception(self, message: str, /, **kwargs) -> None:
        """Log exception with traceback"""
        self._log_with_context(logging.ERROR, message, exc_info=True, **kwargs)

    def _log_with_context(self, level: int, message: str, /, **kwargs) -> None:
        """Log with additional context"""
        if not self.logger.isEnabledFor(level):
            return

        context = {
            'run_id': self.run_id,
            'timestamp': datetime.now(timezone.utc).isoformat(),
        }
        if kwargs:
            context.update(kwargs)

        context_str = " | ".join([f"{k}={v}" for k, v in context.items() if k != 'exc_info'])
        formatted_message = f"{message} | {context_str}"

        self.logger.log(level, formatted_message, exc_info=kwargs.get('exc_info', False))

    def log_solver_event(self, solver: str, event: str, **kwargs) -> None:
        """Log a solver lifecycle event (assembly, factorization, march...)"""
        self.info(
            f"Solver Event: {solver} {event}",
            solver=solver,
            event=event,
            **kwargs
        )

    def log_condition_check(self, condition: str, value: float, holds: bool, **kwargs) -> None:
        """Log the outcome of a sufficient-condition check; violations warn"""
        level = logging.INFO if holds else logging.WARNING
        self._log_with_context(
            level,
            f"Condition Check: {condition}",
            condition=condition,
            value=value,
            holds=holds,
            **kwargs
        )

    def log_convergence(self, study: str, level_value: Any, error: float, **kwargs) -> None:
        """Log one level of a convergence study"""
        self.info(
            f"Convergence: {study}",
            study=study,
            level_value=level_value,
            error=error,
            **kwargs
        )

    def log_performance_metric(self, metric_name: str, value: float, unit: str = "ms", **kwargs) -> None:
        """Log specific to performance metrics"""
        self.debug(
            f"Performance: {metric_name}",
            metric_name=metric_name,
            value=value,
            unit=unit,
            **kwargs
        )


class PerformanceLogger:
    """Specialized logger for performance metrics"""

    def __init__(self, logger: SimulationLogger):
        self.logger = logger
        self.start_times: Dict[str, float] = {}

    @staticmethod
    def _key(operation: str) -> str:
        # study levels time the same operation from several threads
        return f"{operation}@{threading.get_ident()}"

    def start_timing(self, operation: str) -> None:
        """Start timing of an operation"""
        self.start_times[self._key(operation)] = time.perf_counter()

    def end_timing(self, operation: str, **kwargs) -> float:
        """End timing and log the metric"""
        key = self._key(operation)
        if key not in self.start_times:
            self.logger.warning(f"No start time found for operation: {operation}")
            return 0.0

        elapsed_ms = (time.perf_counter() - self.start_times.pop(key)) * 1000
        self.logger.log_performance_metric(operation, round(elapsed_ms, 3), unit="ms", **kwargs)
        return elapsed_ms


class ErrorLogger:
    """Specialized logger for error handling"""

    def __init__(self, logger: SimulationLogger):
        self.logger = logger

    def log_solver_error(self, solver: str, error: Exception, **kwargs) -> None:
        """Log a failed solve"""
        self.logger.error(
            f"Solver Error: {solver}",
            solver=solver,
            error_type=type(error).__name__,
            error_message=str(error),
            **kwargs
        )

    def log_config_error(self, source: str, error: Exception, **kwargs) -> None:
        """Log a rejected configuration"""
        self.logger.error(
            f"Config Error: {source}",
            source=source,
            error_type=type(error).__name__,
            error_message=str(error),
            **kwargs
        )

    def log_io_error(self, path: str, error: Exception, **kwargs) -> None:
        """Log a failed read or write"""
        self.logger.error(
            f"IO Error: {path}",
            path=path,
            error_type=type(error).__name__,
            error_message=str(error),
            **kwargs
        )

    def log_critical_system_error(self, component: str, error: Exception, **kwargs) -> None:
        """Log for critical system errors"""
        self.logger.critical(
            f"Critical System Error: {component}",
            component=component,
            error_type=type(error).__name__,
            error_message=str(error),
            traceback=traceback.format_exc(),
            **kwargs
        )


# Global instances
_main_logger: Optional[SimulationLogger] = None
_performance_logger: Optional[PerformanceLogger] = None
_error_logger: Optional[ErrorLogger] = None


def get_logger(name: str = "heatsim") -> SimulationLogger:
    """Get the main logger"""
    global _main_logger
    if _main_logger is None:
        _main_logger = SimulationLogger(name)
    return _main_logger


def get_performance_logger() -> PerformanceLogger:
    """Get the performance logger"""
    global _performance_logger
    if _performance_logger is None:
        _performance_logger = PerformanceLogger(get_logger())
    return _performance_logger


def get_error_logger() -> ErrorLogger:
    """Get the error logger"""
    global _error_logger
    if _error_logger is None:
        _error_logger = ErrorLogger(get_logger())
    return _error_logger


def setup_logging(version: str = "1.0.0") -> SimulationLogger:
    """Initialize the logging system"""
    logger = get_logger()
    get_performance_logger()
    get_error_logger()
    logger.info("Logging system initialized", version=version)
    return logger

"""
Logging System for the L-DQN solver
Module-level loggers, structured events and function-call tracing
"""

import logging
import os
import json
import traceback
from datetime import datetime
from typing import Any, Dict
from functools import wraps
import inspect
import time

import numpy as np

from ldqn.config import settings

LOG_FORMAT = '%(asctime)s | %(levelname)-8s | %(name)s | %(funcName)s:%(lineno)d | %(message)s'
DATE_FORMAT = '%Y-%m-%d %H:%M:%S'


def _jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays so event payloads serialize"""
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


class DetailedLogger:
    """Logger with structured event and error records"""

    def __init__(self, name: str, log_level: str = None):
        self.logger = logging.getLogger(name)
        self.logger.setLevel(getattr(logging, (log_level or settings.LOG_LEVEL).upper()))
        self.log_dir = settings.LOG_DIR

        # Add handlers if not already added
        if not self.logger.handlers:
            formatter = logging.Formatter(LOG_FORMAT, datefmt=DATE_FORMAT)

            console_handler = logging.StreamHandler()
            console_handler.setLevel(logging.INFO)
            console_handler.setFormatter(formatter)
            self.logger.addHandler(console_handler)

            if self.log_dir:
                os.makedirs(self.log_dir, exist_ok=True)
                file_handler = logging.FileHandler(
                    os.path.join(self.log_dir, f"{name.lower().replace('.', '_')}.log")
                )
                file_handler.setLevel(logging.DEBUG)
                file_handler.setFormatter(formatter)
                self.logger.addHandler(file_handler)

    # Passthrough standard logging methods for compatibility
    def debug(self, msg: str, *args, **kwargs):
        self.logger.debug(msg, *args, **kwargs)

    def info(self, msg: str, *args, **kwargs):
        self.logger.info(msg, *args, **kwargs)

    def warning(self, msg: str, *args, **kwargs):
        self.logger.warning(msg, *args, **kwargs)

    def error(self, msg: str, *args, **kwargs):
        self.logger.error(msg, *args, **kwargs)

    def exception(self, msg: str, *args, **kwargs):
        self.logger.exception(msg, *args, **kwargs)

    def isEnabledFor(self, level: int) -> bool:
        return self.logger.isEnabledFor(level)

    def log_event(self, event: str, payload: Dict = None, level: int = logging.DEBUG):
        """Log a structured event as `EVENT | {json}`"""
        if not self.logger.isEnabledFor(level):
            return
        self.logger.log(level, f"{event} | {json.dumps(_jsonable(payload or {}), sort_keys=True)}")

    def log_function_entry(self, func_name: str, args: tuple = (), kwargs: dict = None):
        """Log function entry with parameters"""
        kwargs = kwargs or {}
        self.logger.debug(f"ENTER {func_name} | args={str(args)[:200]} | kwargs={str(kwargs)[:200]}")

    def log_function_exit(self, func_name: str, result: Any = None, execution_time: float = None):
        """Log function exit with result and execution time"""
        time_info = f" | execution_time={execution_time:.4f}s" if execution_time is not None else ""
        self.logger.debug(f"EXIT {func_name}{time_info} | result={str(result)[:200]}")

    def log_error(self, func_name: str, error: Exception, context: Dict = None):
        """Log detailed error information"""
        error_info = {
            "function": func_name,
            "error_type": type(error).__name__,
            "error_message": str(error),
            "traceback": traceback.format_exc(),
            "context": _jsonable(context or {}),
            "timestamp": datetime.now().isoformat()
        }

        self.logger.error(f"ERROR in {func_name} | {json.dumps(error_info, indent=2, default=str)}")
        self._log_to_error_file(error_info)

    def _log_to_error_file(self, error_info: Dict):
        """Append errors to a separate file when file logging is on"""
        if not self.log_dir:
            return
        with open(os.path.join(self.log_dir, "errors.log"), "a") as f:
            f.write(f"\n{'='*80}\n")
            f.write(json.dumps(error_info, indent=2, default=str))
            f.write(f"\n{'='*80}\n")


def log_function_calls(logger_name: str = None):
    """Decorator to automatically log function calls"""
    def decorator(func):
        @wraps(func)
        def wrapper(*args, **kwargs):
            name = logger_name or inspect.getmodule(func).__name__
            logger = get_logger(name)
            logger.log_function_entry(func.__name__, args, kwargs)

            start_time = time.perf_counter()
            try:
                result = func(*args, **kwargs)
                logger.log_function_exit(func.__name__, result, time.perf_counter() - start_time)
                return result
            except Exception as e:
                logger.log_error(func.__name__, e, {
                    "args": str(args)[:200],
                    "kwargs": str(kwargs)[:200],
                    "execution_time": time.perf_counter() - start_time
                })
                raise
        return wrapper
    return decorator


_loggers: Dict[str, DetailedLogger] = {}


def get_logger(module_name: str) -> DetailedLogger:
    """Get a logger for a specific module"""
    if module_name not in _loggers:
        _loggers[module_name] = DetailedLogger(module_name)
    return _loggers[module_name]


# Global loggers for different components
solver_logger = get_logger("ldqn.solver")
simulator_logger = get_logger("ldqn.simulator")
data_logger = get_logger("ldqn.data")
diagnostics_logger = get_logger("ldqn.diagnostics")
cli_logger = get_logger("ldqn.cli")

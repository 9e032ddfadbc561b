#!/usr/bin/env python3
"""
Logger module for the CFPI toolkit.
Initializes a logger with stream and file handlers.
"""

import logging
from pathlib import Path
from src.config import CONFIG

# Configure basic logger settings
LOGGER = logging.getLogger("CFPI")
LOGGER.setLevel(logging.INFO)  # Default level; can be overridden (e.g., to DEBUG)

# Create console handler
console_handler = logging.StreamHandler()
console_handler.setLevel(logging.DEBUG)
console_formatter = logging.Formatter('%(asctime)s - %(name)s - [%(levelname)s] - %(message)s')
console_handler.setFormatter(console_formatter)
LOGGER.addHandler(console_handler)

file_formatter = logging.Formatter('%(asctime)s - %(levelname)s - %(message)s')

# Optionally add a file handler if logs directory can be created in CONFIG.data_dir/logs
try:
    logs_path = Path(CONFIG.data_dir) / "logs"
    logs_path.mkdir(parents=True, exist_ok=True)
    file_handler = logging.FileHandler(logs_path / "application.log")
    file_handler.setLevel(logging.INFO)
    file_handler.setFormatter(file_formatter)
    LOGGER.addHandler(file_handler)
except OSError:
    LOGGER.debug("Log directory not writable; file logging disabled")


def attach_run_handler(run_dir) -> logging.Handler:
    """Mirror log records into <run_dir>/run.log until detach_handler is called."""
    path = Path(run_dir)
    path.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path / "run.log")
    handler.setLevel(logging.DEBUG)
    handler.setFormatter(file_formatter)
    LOGGER.addHandler(handler)
    return handler


def detach_handler(handler: logging.Handler) -> None:
    LOGGER.removeHandler(handler)
    handler.close()

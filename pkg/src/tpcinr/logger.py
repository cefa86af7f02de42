"""Logging configuration for tpcinr.

This module provides a helper that attaches console and optional file handlers
to the package logger. Library modules only ever call ``logging.getLogger``;
handlers are installed once by the application (the CLI or a script).
"""

import logging

PACKAGE_LOGGER = "tpcinr"
LOG_FORMAT = "%(asctime)s - %(levelname)s - %(message)s"


def configure_logging(level: str | int = "INFO", log_file: str | None = None) -> logging.Logger:
    """Configure the ``tpcinr`` logger with a console handler and an optional file handler.

    Only the package logger is touched; the root logger is left alone. Calling
    this again replaces the handlers installed by a previous call.

    Args:
        level: Logging level name or number applied to the logger and its handlers.
        log_file: Path of a log file opened in write mode. No file handler when None.

    Returns:
        The configured package logger.

    Example:
        >>> from tpcinr.logger import configure_logging
        >>> configure_logging("DEBUG", log_file="tpcinr.log")
    """
    logger = logging.getLogger(PACKAGE_LOGGER)
    if isinstance(level, str):
        level = level.upper()
    logger.setLevel(level)

    for handler in [h for h in logger.handlers if getattr(h, "_tpcinr_handler", False)]:
        logger.removeHandler(handler)
        handler.close()

    formatter = logging.Formatter(LOG_FORMAT)

    # Console handler (stderr, so stdout stays free for metrics)
    console_handler = logging.StreamHandler()
    console_handler.setLevel(level)
    console_handler.setFormatter(formatter)
    console_handler._tpcinr_handler = True  # type: ignore[attr-defined]
    logger.addHandler(console_handler)

    # File handler
    if log_file:
        file_handler = logging.FileHandler(log_file, mode="w")
        file_handler.setLevel(level)
        file_handler.setFormatter(formatter)
        file_handler._tpcinr_handler = True  # type: ignore[attr-defined]
        logger.addHandler(file_handler)

    return logger

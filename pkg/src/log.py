# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Define logging helpers."""

import functools
import logging

from literals import LOG_LEVELS

_LEVELS = {
    "info": logging.INFO,
    "debug": logging.DEBUG,
    "warn": logging.WARNING,
    "error": logging.ERROR,
}


def log_command(logger):
    """Log with the logger when a harness command is executed.

    Args:
        logger: logger used to log commands.

    Returns:
        Decorator wrapper.
    """

    def decorator(method):
        """Log decorator wrapper.

        Args:
            method: method wrapped by the decorator.

        Returns:
            Decorated method.
        """

        @functools.wraps(method)
        def decorated(self, *args, **kwargs):
            """Log decorator method.

            Args:
                args: positional arguments of the command.
                kwargs: keyword arguments of the command.

            Returns:
                Result of the command.
            """
            logger.info(
                f"* running {self.__class__.__name__}.{method.__name__}"
            )
            try:
                return method(self, *args, **kwargs)
            finally:
                logger.info(
                    f"* completed {self.__class__.__name__}.{method.__name__}"
                )

        return decorated

    return decorator


def configure_logging(level_name):
    """Configure the root logger for command line use.

    Args:
        level_name: one of the supported log level names.

    Raises:
        ValueError: in case of an unknown log level.
    """
    level_name = level_name.lower()
    if level_name not in LOG_LEVELS:
        raise ValueError(f"config: invalid log level {level_name!r}")

    logging.basicConfig(
        level=_LEVELS[level_name],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    logging.getLogger().setLevel(_LEVELS[level_name])

"""Errors raised by the experiment harness."""

from ..core import MiisError

__all__ = ["ConfigError", "HarnessError"]


class ConfigError(MiisError):
    """A config file failed validation; the message names the field."""


class HarnessError(MiisError):
    """A run could not produce its result bundle."""

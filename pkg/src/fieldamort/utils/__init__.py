"""Utilities."""

from .counters import OpCounter  # noqa: F401
from .logger import Logger  # noqa: F401

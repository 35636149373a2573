"""Relative preference optimization for toy diffusion models."""

from ._core import *  # noqa: F401,F403
from ._core import DrpoError, run_cli

__all__ = [name for name in dir() if not name.startswith("_")]

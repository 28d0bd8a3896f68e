"""Rough-path homogenization of slow-fast stochastic systems at desk scale."""

__version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .kernels import BACKEND  # noqa: F401

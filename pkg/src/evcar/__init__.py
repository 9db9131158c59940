"""Minimum-time control of an electric car under current and speed constraints,
solved by indirect multiple shooting and differential path following."""

from .model import Bounds, CarParams, ConfigError, ModelConstants, load_config, normalize
from .shooting import STRUCTURES, SolveReport, check_admissible, get_structure, solve
from .continuation import HOMOTOPIES, follow, get_homotopy

__version__ = "0.1.0"

__all__ = [
    "Bounds", "CarParams", "ConfigError", "ModelConstants", "load_config", "normalize",
    "STRUCTURES", "SolveReport", "check_admissible", "get_structure", "solve",
    "HOMOTOPIES", "follow", "get_homotopy",
]

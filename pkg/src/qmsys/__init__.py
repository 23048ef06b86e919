"""Numerical lab for weakly coupled min-max parabolic systems on the torus."""

from .catalog import build_catalog_scenario, catalog_names
from .scenario import ScenarioError, SystemSpec, eval_coefficients

__all__ = ["build_catalog_scenario", "catalog_names", "ScenarioError", "SystemSpec", "eval_coefficients"]
__version__ = "0.1.0"

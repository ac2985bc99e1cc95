"""Adiabatic limit of gradient flows for F restricted to Sigma = H^{-1}(0).

Submodules: fields, hypersurface, criticals, flows, linops, newton, harness.
"""

from .errors import AdiaflowError, ConfigError
from .fields import ProblemSetup, ScalarField
from .flows import AmbientPath, BasePath, TimeGrid
from .problems import get_problem

__version__ = "0.1.0"

__all__ = ["AdiaflowError", "ConfigError", "ProblemSetup", "ScalarField", "TimeGrid",
           "BasePath", "AmbientPath", "get_problem", "__version__"]

"""Stein's method numerics for Birkhoff sums of chaotic dynamical systems."""
from . import (birkhoff, bounds, correlations, metrics, observables, rng, scheme, stein_core,
               systems)
from .config import ExperimentConfig
from .errors import (ConfigError, ContractError, FitError, NumericalError, ResourceError,
                     SteinDynError)
from .rng import Stream

__version__ = "0.1.0"

__all__ = ["birkhoff", "bounds", "correlations", "metrics", "observables", "rng", "scheme",
           "stein_core", "systems", "ExperimentConfig", "Stream", "SteinDynError",
           "ContractError", "ConfigError", "NumericalError", "FitError", "ResourceError"]

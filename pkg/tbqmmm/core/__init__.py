"""
Core module for tbqmmm.
Contains configuration, exceptions, experiment schemas and the coefficient cache.
"""

from .config import config, Config
from .exceptions import (
    TBQMMMError,
    ConfigurationError,
    InvalidGeometryError,
    UnsupportedDefectError,
    InvalidDecompositionError,
    InvalidParameterError,
    AccumulationError,
    GeometryTooSmallError,
    ShapeMismatchError,
    DerivativeInconsistencyError,
    NonEquilibriumReferenceError,
    BranchCutError,
    MissingPredictorError,
    AdmissibilityError,
    StabilityCheckError,
    ReferenceSolveError,
    FitDomainError,
    CacheError
)
from .coefficient_cache import CoefficientCache
from .schema import ExperimentConfig, load_experiment, parse_experiment

__all__ = [
    "config",
    "Config",
    "TBQMMMError",
    "ConfigurationError",
    "InvalidGeometryError",
    "UnsupportedDefectError",
    "InvalidDecompositionError",
    "InvalidParameterError",
    "AccumulationError",
    "GeometryTooSmallError",
    "ShapeMismatchError",
    "DerivativeInconsistencyError",
    "NonEquilibriumReferenceError",
    "BranchCutError",
    "MissingPredictorError",
    "AdmissibilityError",
    "StabilityCheckError",
    "ReferenceSolveError",
    "FitDomainError",
    "CacheError",
    "CoefficientCache",
    "ExperimentConfig",
    "load_experiment",
    "parse_experiment"
]

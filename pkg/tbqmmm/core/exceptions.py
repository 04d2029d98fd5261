class TBQMMMError(Exception):
    """Base exception for the tbqmmm package."""
    pass


class ConfigurationError(TBQMMMError):
    """Raised when configuration is invalid or missing."""
    pass


class InvalidGeometryError(TBQMMMError):
    """Raised when a reference configuration cannot be built."""
    pass


class UnsupportedDefectError(TBQMMMError):
    """Raised for an unknown defect kind."""
    pass


class InvalidDecompositionError(TBQMMMError):
    """Raised when the QM/MM/buffer radii violate their ordering."""
    pass


class InvalidParameterError(TBQMMMError):
    """Raised when a numerical parameter is out of range."""
    pass


class AccumulationError(TBQMMMError):
    """Raised when two atoms come closer than the non-accumulation distance."""
    pass


class GeometryTooSmallError(TBQMMMError):
    """Raised when a cluster reaches past the generated domain."""
    pass


class ShapeMismatchError(TBQMMMError):
    """Raised when a stencil argument does not match its stencil domain."""
    pass


class DerivativeInconsistencyError(TBQMMMError):
    """Raised when finite-difference derivatives fail a symmetry check."""
    pass


class NonEquilibriumReferenceError(TBQMMMError):
    """Raised when the reference lattice carries a non-zero force."""
    pass


class BranchCutError(TBQMMMError):
    """Raised when the screw predictor is evaluated on its branch cut."""
    pass


class MissingPredictorError(TBQMMMError):
    """Raised when a dislocation quantity is requested without a predictor."""
    pass


class AdmissibilityError(TBQMMMError):
    """Raised when a displacement is non-zero on frozen far-field sites."""
    pass


class StabilityCheckError(TBQMMMError):
    """Raised when the smallest Hessian eigenvalues cannot be computed."""
    pass


class ReferenceSolveError(TBQMMMError):
    """Raised when the pure tight-binding reference does not converge."""
    pass


class FitDomainError(TBQMMMError):
    """Raised when a log-log fit receives unusable data."""
    pass


class CacheError(TBQMMMError):
    """Raised when a coefficient cache entry cannot be read or written."""
    pass

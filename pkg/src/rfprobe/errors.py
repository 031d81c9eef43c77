"""Exception types shared across the package."""


class RFProbeError(Exception):
    """Base class for all package errors."""


class InvalidSpecError(RFProbeError):
    """A model-flow specification violates its preconditions."""


class SchemaError(InvalidSpecError):
    """A space file does not conform to the JSON schema.

    ``path`` points at the offending field.
    """

    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class MetricAxiomError(RFProbeError):
    """Metric axioms violated beyond tolerance; carries the offending triple."""

    def __init__(self, message, triple=None):
        super().__init__(message)
        self.triple = triple


class InvalidInputError(RFProbeError):
    """Operation input outside the documented domain."""


class UnsupportedOperationError(RFProbeError):
    """The space lacks an evaluator this operation requires."""


class IllConditionedGeneratorError(RFProbeError):
    """Bandwidth below resolution; carries the suggested minimum."""

    def __init__(self, message, suggested_minimum=None):
        super().__init__(message)
        self.suggested_minimum = suggested_minimum


class IntegrationFailureError(RFProbeError):
    """Adaptive step control could not meet its tolerance."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConvergenceFailureError(RFProbeError):
    """Iterative solver hit its cap; carries the final residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DegenerateCollisionError(RFProbeError):
    """Dual heat flows collided (W numerically zero)."""


class ResolutionError(RFProbeError):
    """Probe schedule or ball empty after resolution floors."""


class ExcludedPairError(RFProbeError):
    """Geodesic passes through an excluded locus (e.g. cone apex).

    ``atoms`` lists the offending coupling atoms as (i, j, weight).
    """

    def __init__(self, message, atoms=None):
        super().__init__(message)
        self.atoms = atoms or []

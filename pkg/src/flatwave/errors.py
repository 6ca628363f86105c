"""Exception hierarchy for flatwave.

Every failure mode that callers are expected to branch on gets its own
class; anything else surfaces as a plain ValueError from the offending
routine.
"""


class FlatwaveError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(FlatwaveError):
    """Invalid grid sizes, viscosities, or run-configuration values.

    ``violations`` collects every problem found (not just the first) when
    raised by the config parser.
    """

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations) if violations else [message]


class DomainError(FlatwaveError):
    """Argument outside the mathematical domain of a pressure-law map."""


class AdmissibilityError(FlatwaveError):
    """Layer depth incompatible with the hydrostatic balance of the law."""


class GeometryError(FlatwaveError):
    """Degenerate flattening map (Jacobian too close to zero)."""

    def __init__(self, message, min_jacobian):
        super().__init__(message)
        self.min_jacobian = min_jacobian


class BlowupError(FlatwaveError):
    """State left the physically meaningful regime (density floor, NaN)."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics) if diagnostics else {}


class SolverError(FlatwaveError):
    """Per-mode linear solve failed or produced an uncertifiable residual."""

    def __init__(self, message, mode_index=None):
        super().__init__(message)
        self.mode_index = mode_index


class CompatibilityError(FlatwaveError):
    """Boundary data and divergence data violate the discrete flux balance."""


class StepRejectedError(FlatwaveError):
    """Time step exceeds the stability gate; carries a usable suggestion."""

    def __init__(self, message, suggested_dt):
        super().__init__(message)
        self.suggested_dt = suggested_dt

"""Exception hierarchy.

Every error carries a short machine-readable ``code`` that the command line
maps to an exit status.
"""


class FracSPDEError(Exception):
    code = "EFRAC"


class DomainError(FracSPDEError, ValueError):
    """Argument outside the domain where a formula is defined."""

    code = "EDOMAIN"


class HurstRangeError(DomainError):
    code = "EHURST"


class GridError(FracSPDEError, ValueError):
    code = "EGRID"


class ConfigError(FracSPDEError, ValueError):
    code = "ECONFIG"


class BlowUpError(FracSPDEError, FloatingPointError):
    """Raised when a Picard iterate leaves the finite range."""

    code = "ENUMERIC"

    def __init__(self, message, slice_index=None):
        super().__init__(message)
        self.slice_index = slice_index


class QuadratureFlag(FracSPDEError):
    """Monte Carlo quadrature whose relative standard error is too large."""

    code = "EQUAD"

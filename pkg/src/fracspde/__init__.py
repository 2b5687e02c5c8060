"""Wave and heat equations driven by fractional-in-space noise.

Modules
-------
greens
    Green functions, spectral integrals and constants (deterministic oracles).
noise
    One complex white noise coupling the fractional noises of every Hurst index.
chaos
    Second moments of the Wiener chaos components of Picard iterates.
solver
    Picard iteration of the mild equation on the grid.
stats
    Monte Carlo estimators: moments, Hölder fits, seminorms, coupling, KS.
cli
    Config-driven experiments and reproducible output files.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    BlowUpError,
    ConfigError,
    DomainError,
    FracSPDEError,
    GridError,
    HurstRangeError,
    QuadratureFlag,
)
from .greens import EquationKind, check_hurst  # noqa: F401

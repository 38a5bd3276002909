"""Spatially discrete approximation to log-Gaussian Cox processes.

Fits aggregated disease counts with a Poisson log-linear mixed model whose
random effects are weighted region averages of a continuous Gaussian field,
estimated by Monte Carlo maximum likelihood.
"""

from .errors import (
    SDAError,
    InvalidGeometryError,
    ParseError,
    OutOfBoundsError,
    DegenerateOffsetError,
    DegenerateWeightError,
    NumericalDegeneracyError,
    ConvergenceError,
    NumericalConsistencyError,
    ShapeError,
    GridSizeError,
)

__version__ = "0.1.0"

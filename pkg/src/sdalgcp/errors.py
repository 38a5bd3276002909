"""Exception hierarchy shared by all modules."""


class SDAError(Exception):
    """Base class; ``module`` names the component that raised."""

    module = "sdalgcp"


class InvalidGeometryError(SDAError, ValueError):
    module = "geometry"


class ParseError(SDAError, ValueError):
    module = "geometry"


class OutOfBoundsError(SDAError, ValueError):
    module = "raster"


class DegenerateOffsetError(SDAError, ValueError):
    module = "raster"


class DegenerateWeightError(SDAError, ValueError):
    module = "quadrature"


class NumericalDegeneracyError(SDAError, ArithmeticError):
    module = "covariance"


class ConvergenceError(SDAError, RuntimeError):
    module = "latent"


class NumericalConsistencyError(SDAError, ArithmeticError):
    module = "predict"


class ShapeError(SDAError, ValueError):
    module = "sim"


class GridSizeError(SDAError, ValueError):
    module = "sim"

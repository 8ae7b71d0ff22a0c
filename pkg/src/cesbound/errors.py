"""Exception hierarchy shared by every module of the package."""

import numpy as np


class CesBoundError(Exception):
    """Base class for all errors raised by cesbound."""


class SingularMatrix(CesBoundError, np.linalg.LinAlgError):
    """A matrix that must be inverted failed the conditioning guard."""


class DimensionMismatch(CesBoundError, ValueError):
    pass


class InvalidParameter(CesBoundError, ValueError):
    pass


class DivergentIntegral(CesBoundError, ArithmeticError):
    """Adaptive quadrature did not reach the requested tolerance."""


class ConfigError(CesBoundError, ValueError):
    """Experiment configuration failed schema or semantic validation."""

    def __init__(self, message, path=()):
        self.path = tuple(path)
        where = "/".join(str(p) for p in self.path)
        super().__init__(f"{where}: {message}" if where else message)

"""Exception types raised across the package."""

import numpy as np


class ConfigurationError(ValueError):
    """Invalid dimensions, powers, or other system parameters."""


class SingularChannelError(np.linalg.LinAlgError):
    """The channel (or its Gram matrix) is rank deficient."""


class DegenerateGeometryError(ValueError):
    """The sensing geometry yields zero Fisher information (e.g. endfire)."""


class ConfigParseError(ConfigurationError):
    """A config file could not be parsed.

    Parameters
    ----------
    message : str
        What went wrong.
    lineno : int, optional
        1-based line number of the offending line.
    """

    def __init__(self, message, lineno=None):
        self.lineno = lineno
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)

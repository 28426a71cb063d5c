"""
Exception hierarchy shared by the disaggregation library and CLI.

Every error raised on purpose derives from DisaggError, so callers (the CLI in
particular) can map failures to exit codes without catching bare Exception.
"""


class DisaggError(Exception):
    """Base class for all library errors"""


class DimensionError(DisaggError, ValueError):
    """Matrix shapes do not line up"""


class NonFiniteError(DisaggError, ValueError):
    """A NaN or infinite value reached a matrix"""


class SingularSystemError(DisaggError, ArithmeticError):
    """Normal equations could not be factorized"""


class NotPositiveDefiniteError(DisaggError, ArithmeticError):
    """Cholesky factorization failed"""


class DivergenceError(DisaggError, ArithmeticError):
    """Training produced non-finite values

    Args:
        message: Human readable description
        iteration: Update cycle at which the divergence was detected
    """

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


class DataError(DisaggError, ValueError):
    """Input data failed validation"""


class ConfigError(DisaggError, ValueError):
    """Invalid configuration or command-line usage"""


class ModelFormatError(DisaggError, ValueError):
    """A model or dataset file could not be decoded"""

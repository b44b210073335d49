"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures to
its documented status codes (2 configuration, 3 numeric).
"""


class FracSHEError(Exception):
    exit_code = 1


class ConfigurationError(FracSHEError, ValueError):
    exit_code = 2


class ParameterDomainError(ConfigurationError):
    """A model parameter lies outside its admissible range."""


class ResolutionError(ConfigurationError):
    """The requested quantity is not resolved by the grid or time step."""


class NumericError(FracSHEError, ArithmeticError):
    exit_code = 3


class QuadratureError(NumericError):
    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class BlowUpError(NumericError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class FactorizationError(NumericError):
    pass


class EmbeddingError(NumericError):
    def __init__(self, message, suggested_padding=None):
        super().__init__(message)
        self.suggested_padding = suggested_padding


class DegenerateTestError(NumericError):
    """The statistic is undefined, e.g. the diffusion coefficient vanishes."""


class ReplayError(FracSHEError):
    exit_code = 2

"""Exception hierarchy.

Every error raised by the package derives from :class:`CSQDError` and carries
an ``exit_class`` used by the command-line interface.
"""


class CSQDError(Exception):
    exit_class = "INPUT"


class ConfigError(CSQDError):
    exit_class = "CONFIG"


class InputError(CSQDError):
    exit_class = "INPUT"


class FormatError(InputError):
    """Malformed text input; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ParseError(FormatError):
    pass


class RangeError(InputError):
    pass


class ConsistencyError(InputError):
    pass


class DimensionError(InputError):
    pass


class EmptyInputError(InputError):
    pass


class DomainError(InputError, ValueError):
    pass


class SizeError(ConfigError):
    pass


class NumericError(CSQDError):
    exit_class = "NUMERIC"


class DegenerateStateError(NumericError):
    pass


class ImpossibleCorrectionError(NumericError):
    pass


class ConvergenceError(CSQDError):
    """Iterative solver failed; ``residual`` is the best residual norm reached."""

    exit_class = "CONVERGENCE"

    def __init__(self, message, residual=float("nan"), eigenvalue=float("nan")):
        super().__init__(message)
        self.residual = residual
        self.eigenvalue = eigenvalue


class SymmetryError(InputError):
    pass


class ArtifactIOError(CSQDError):
    exit_class = "IO"

"""Exception hierarchy shared by every cecnet module."""


class CECError(Exception):
    """Base class for all library errors."""


class DimensionError(CECError, ValueError):
    """Operand shapes are incompatible."""


class ParameterError(CECError, ValueError):
    """A numeric hyperparameter is outside its valid range."""


class ConfigurationError(CECError, ValueError):
    """A mode, parameter bundle or run configuration is invalid."""


class DataError(CECError, ValueError):
    """Labels, classes or dataset contents are invalid."""


class ContractError(CECError, RuntimeError):
    """An API precondition was violated by the caller."""


class TrainingError(CECError, RuntimeError):
    """Training produced a non-finite value.

    The offending training state is attached so callers can dump it.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class OracleError(CECError, RuntimeError):
    """A reference computation could not be evaluated."""


class CheckpointError(CECError, OSError):
    """A checkpoint file is missing, truncated or not in CEC1 format."""

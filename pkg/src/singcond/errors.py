"""Exception hierarchy shared by all modules."""


class SingcondError(Exception):
    """Base class for every error raised by the package."""


class ParseError(SingcondError, ValueError):
    def __init__(self, message, position=None):
        if position is not None:
            message = f"{message} (at position {position})"
        super().__init__(message)
        self.position = position


class DomainError(SingcondError, ArithmeticError):
    """Expression evaluated outside its domain (division by zero, log of x <= 0, ...)."""


class ChartError(SingcondError):
    pass


class ProjectionError(SingcondError):
    pass


class SingularJacobianError(ProjectionError):
    pass


class RoundTripError(SingcondError):
    """A user-supplied inverse or implicit solution does not invert the forward map."""


class NormalizationError(SingcondError):
    pass


class NullConditioningError(SingcondError):
    """Conditioning on a value where the marginal density vanishes."""


class SamplerError(SingcondError):
    pass


class ConfigError(SingcondError):
    pass

class DiffuseCalError(Exception):
    """Base class for errors raised by this package."""


class InvalidGeometryError(DiffuseCalError, ValueError):
    pass


class InvalidBandError(DiffuseCalError, ValueError):
    pass


class QuadratureError(DiffuseCalError, ArithmeticError):
    pass


class TruncationError(DiffuseCalError, ArithmeticError):
    """A spherical-harmonic series was cut off before it converged."""


class AliasingError(DiffuseCalError, ValueError):
    pass


class DegenerateInputError(DiffuseCalError, ValueError):
    pass


class CalibrationError(DiffuseCalError, ValueError):
    pass


class ConfigError(DiffuseCalError, ValueError):
    pass

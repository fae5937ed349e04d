"""Exception hierarchy shared by every insinet module."""


class INSINetError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""

    exit_code = 1


class InvalidGeometryError(INSINetError, ValueError):
    exit_code = 3


class InvalidInputError(INSINetError, ValueError):
    exit_code = 4


class IncompleteInputError(INSINetError, ValueError):
    exit_code = 4


class ShapeError(INSINetError, ValueError):
    exit_code = 5


class ConfigError(INSINetError, ValueError):
    exit_code = 2


class ContractError(INSINetError, ValueError):
    exit_code = 5


class DivergenceError(INSINetError, RuntimeError):
    exit_code = 6


class GradientCheckError(INSINetError, AssertionError):
    exit_code = 7

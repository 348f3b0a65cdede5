"""Exception hierarchy. Each family maps to a distinct CLI exit code."""


class StanceFuseError(Exception):
    exit_code = 1


class ConfigError(StanceFuseError):
    exit_code = 2


class DataError(StanceFuseError):
    exit_code = 3


class TransportError(StanceFuseError):
    exit_code = 4


class NumericError(StanceFuseError):
    """A tensor op produced NaN or Inf."""

    exit_code = 5


class TrainingError(NumericError):
    pass


class ContractError(StanceFuseError):
    """A caller violated a shape or usage contract."""

    exit_code = 6

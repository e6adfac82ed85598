"""Exception hierarchy shared by every module.

Each error carries the CLI exit code it maps to.
"""


class MainError(Exception):
    exit_code = 4


class ConfigError(MainError, ValueError):
    exit_code = 2


class DataError(MainError, ValueError):
    exit_code = 3


class DimensionError(MainError, ValueError):
    pass


class NumericError(MainError, ArithmeticError):
    pass


class DegenerateBatchError(MainError, ValueError):
    pass


class DegenerateVectorError(MainError, ValueError):
    pass


class ContractError(MainError, RuntimeError):
    pass


class ModeError(MainError, ValueError):
    pass


class LabelError(DataError):
    pass


class BatchError(MainError, ValueError):
    pass


class ProtocolError(ConfigError):
    pass


class MetricError(MainError, ValueError):
    pass


class DomainError(MainError, ValueError):
    pass

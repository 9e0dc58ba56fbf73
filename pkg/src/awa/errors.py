"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures
to the documented process status (2 config, 3 data, 4 numerical).
"""


class AWAError(Exception):
    exit_code = 1


class ConfigError(AWAError):
    exit_code = 2


class DataError(AWAError):
    exit_code = 3


class NumericalError(AWAError):
    exit_code = 4


class InvalidTrace(DataError, ValueError):
    pass


class DegenerateTrace(DataError, ValueError):
    pass


class EmptyInput(DataError, ValueError):
    pass


class SplitError(DataError):
    pass


class ShapeError(AWAError, ValueError):
    exit_code = 3


class DomainError(AWAError, ValueError):
    exit_code = 4


class ModeError(ConfigError):
    pass


class TrainError(AWAError):
    exit_code = 3


class PairError(ConfigError):
    pass


class InsufficientSets(ConfigError):
    pass


class CoverageError(DataError):
    pass


class CompareError(ConfigError):
    pass


class ArchiveError(DataError):
    pass

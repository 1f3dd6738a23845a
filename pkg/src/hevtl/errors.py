"""Exception types shared across the package.

Each family maps onto one CLI exit code (see ``hevtl.cli``).
"""


class HevError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(HevError):
    pass


class DataError(HevError):
    pass


class CycleParseError(DataError):
    def __init__(self, path, line, msg):
        super().__init__(f"{path}:{line}: {msg}")
        self.path = path
        self.line = line


class CycleValidationError(DataError):
    def __init__(self, index, msg):
        super().__init__(f"index {index}: {msg}")
        self.index = index


class DomainError(HevError, ValueError):
    """An argument lies outside the physical or mathematical domain of an operation."""


class InfeasiblePowerError(DomainError):
    """Battery power beyond the internal-resistance ceiling V_oc^2 / (4 r_0)."""


class LimitError(DomainError):
    """A component limit (battery power, speed, torque) is violated."""


class TrainingError(HevError):
    pass


class GradientError(TrainingError):
    pass


class TransferIncompatibilityError(HevError):
    pass


class CheckpointFormatError(HevError):
    pass

"""Exception hierarchy.

Every error carries an ``exit_code`` so the command-line layer can map
failures onto its stable contract (2 config, 3 data, 4 numerical).
"""


class RtsError(Exception):
    exit_code = 1


class ConfigError(RtsError, ValueError):
    exit_code = 2


class DataError(RtsError, ValueError):
    exit_code = 3


class OrderingError(DataError):
    """Timestamps are not strictly increasing."""


class DegenerateTimestepError(DataError):
    """Two consecutive samples share a timestamp."""


class ExtrapolationError(DataError):
    """A query time falls outside the fitted window plus its guard."""


class NumericalError(RtsError, ArithmeticError):
    exit_code = 4


class DomainError(NumericalError):
    pass


class DegenerateConfigurationError(NumericalError):
    """Fewer than three points, or points (nearly) collinear."""


class SingularGeometryError(NumericalError):
    """cot() singularity or a prism at the instrument origin."""


class NearSingularityError(NumericalError):
    """Rotation angle too close to pi for a stable logarithm."""


class DispersionError(NumericalError):
    """Pose samples too spread for the tangent-space mean to converge."""


class StageError(RtsError):
    """Wraps an error raised inside one pipeline stage."""

    def __init__(self, stage, cause, index=None):
        self.stage = stage
        self.index = index
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        where = stage if index is None else f"{stage}[{index}]"
        super().__init__(f"{where}: {cause}")

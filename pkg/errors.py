"""Exception hierarchy shared by the workbench modules and mapped to CLI exit codes."""


class WorkbenchError(Exception):
    """Base class for every error raised deliberately by the workbench."""

    exit_code = 1


class ParameterError(WorkbenchError, ValueError):
    """A physical or algorithmic parameter is outside its valid range."""

    exit_code = 2


class PulseTruncationError(ParameterError):
    """A delayed pulse or one of its copies would not fit in the fast-time window."""


class DimensionError(WorkbenchError, ValueError):
    """Array shapes do not agree with each other or with the radar configuration."""

    exit_code = 2


class ConfigError(WorkbenchError, ValueError):
    """Run configuration, filter selection or protocol settings are inconsistent."""

    exit_code = 2


class SupportError(WorkbenchError, ValueError):
    """A prototype support set is missing a class."""

    exit_code = 2


class BatchError(WorkbenchError, ValueError):
    """A contrastive batch has an anchor without positives."""

    exit_code = 4


class NumericError(WorkbenchError, ArithmeticError):
    """A computation produced non-finite values."""

    exit_code = 4


class TrainingError(NumericError):
    """Training diverged."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class ArtifactError(WorkbenchError, OSError):
    """An artifact file is missing, unreadable or malformed."""

    exit_code = 3


class AcceptanceError(WorkbenchError):
    """The self-test suite reported failures."""

    exit_code = 5

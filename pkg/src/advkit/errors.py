"""Exception hierarchy shared across the toolkit."""


class AdvkitError(Exception):
    """Base class for all toolkit errors."""


class ConfigurationError(AdvkitError):
    """An architecture or attack/defense configuration is internally inconsistent."""


class InputError(AdvkitError):
    """A value passed to an operation violates its preconditions."""


class FormatError(AdvkitError):
    """A binary file does not conform to its declared format.

    ``offset`` is the byte position at which the problem was detected.
    """

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(AdvkitError):
    """Training diverged or could not proceed; carries epoch/batch context."""

    def __init__(self, message: str, epoch: int | None = None, batch: int | None = None):
        if epoch is not None:
            message = f"{message} (epoch {epoch}, batch {batch})"
        super().__init__(message)
        self.epoch = epoch
        self.batch = batch

"""Exception hierarchy shared across the toolkit."""


class ProvnetError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ProvnetError):
    """A component was configured inconsistently (bad shapes, plans, scopes)."""


class DataError(ProvnetError):
    """Input data violates a precondition (bad labels, malformed records)."""


class UsageError(ProvnetError):
    """An API was called out of order (e.g. backward before forward)."""


class TrainingAborted(ProvnetError):
    """Training hit a non-finite loss or gradient and stopped.

    Carries the last good checkpoint payload so callers can persist it.
    """

    def __init__(self, message, checkpoint=None, history=None):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.history = history or []

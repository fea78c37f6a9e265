"""Exception hierarchy shared across the package.

Three broad classes matter to callers (and to the CLI exit codes):
configuration problems, numerical failures, and storage failures.
"""


class KooprelError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(KooprelError):
    """Invalid spec, config, shape, or argument combination."""


class NumericError(KooprelError):
    """Numerical failure during integration, training, or evaluation."""


class IntegrationError(NumericError):
    """Time integration produced non-finite state."""

    def __init__(self, message, step=None, sample=None):
        super().__init__(message)
        self.step = step
        self.sample = sample


class StabilityError(NumericError):
    """Explicit grid solver violates its stability bound."""


class TrainingDivergedError(NumericError):
    """Training loss became non-finite; carries the partial report."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class UnboundedReliabilityIndexError(NumericError):
    """Failure probability of exactly 0 or 1; the index is unbounded."""


class StoreError(KooprelError):
    """Persistence failure (format, version, or consistency)."""


class ChecksumError(StoreError):
    """Stored payload does not match its recorded digest."""

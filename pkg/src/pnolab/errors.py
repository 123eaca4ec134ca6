"""Exception hierarchy shared by every module.

The CLI maps :class:`ConfigurationError` to exit code 2 and
:class:`VerificationError` to exit code 1.
"""


class PNOError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PNOError, ValueError):
    """Invalid shapes, sizes, parameters or configuration files."""


class EstimatorUndefinedError(PNOError, ValueError):
    """An estimator was called with too few ensemble members."""


class DegenerateEnsembleError(PNOError, ValueError):
    """A sampler cannot produce distinct ensemble members."""


class BlowUpError(PNOError, FloatingPointError):
    """A simulation produced non-finite values."""

    def __init__(self, step, message=None):
        self.step = step
        super().__init__(message or f"non-finite values at step {step}")


class FormatError(PNOError):
    """Malformed tensor container or checkpoint file."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class TrainingDivergedError(PNOError, FloatingPointError):
    """The training loss became non-finite."""

    def __init__(self, epoch, batch, value):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"non-finite loss {value!r} at epoch {epoch}, batch {batch}")


class VerificationError(PNOError):
    """A numerical verification suite found a violation."""

"""Probabilistic Fourier neural operators trained with the energy score, in numpy."""
from .errors import (
    BlowUpError,
    ConfigurationError,
    DegenerateEnsembleError,
    EstimatorUndefinedError,
    FormatError,
    PNOError,
    TrainingDivergedError,
    VerificationError,
)

__version__ = "0.1.0"

"""Exception taxonomy shared across the package.

Every failure mode raised on purpose derives from AffuseError so callers can
catch library errors without swallowing genuine bugs.
"""


class AffuseError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(AffuseError):
    """Tensor extents do not match what an operation requires."""


class AlignmentError(AffuseError):
    """Sequences that must share a time axis do not."""


class ConfigError(AffuseError):
    """Invalid hyperparameter, config file entry, or setup request."""


class ContractError(AffuseError):
    """API used outside its contract (e.g. backward on a non-scalar)."""


class FormatError(AffuseError):
    """A binary or text input file does not match its declared format."""


class TruncationError(FormatError):
    """File payload length disagrees with what its header promises."""


class DataError(AffuseError):
    """File parsed structurally but carries invalid values (NaN/Inf)."""


class CheckpointError(AffuseError):
    """Checkpoint file unreadable or inconsistent with the model config."""


class EvaluationError(AffuseError):
    """Evaluation requested on data that cannot produce a score."""


class TrainingError(AffuseError):
    """Training aborted (e.g. non-finite loss)."""

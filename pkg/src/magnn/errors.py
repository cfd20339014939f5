"""Exception hierarchy shared by every stage of the forecaster."""


class MagnnError(Exception):
    """Base class for all package errors."""


class DimensionError(MagnnError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(MagnnError, RuntimeError):
    """An API precondition was violated by the caller."""


class NonFiniteError(MagnnError, FloatingPointError):
    """A NaN or Inf appeared in a tensor or gradient."""


class ConfigError(MagnnError, ValueError):
    """A configuration record failed validation."""


class IngestionError(MagnnError, ValueError):
    """A dataset file could not be parsed."""


class EmptySplitError(MagnnError, ValueError):
    """A split is too short to produce a single window."""


class CheckpointError(MagnnError, IOError):
    """A checkpoint could not be written or restored."""

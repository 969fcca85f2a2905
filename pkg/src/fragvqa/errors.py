"""Exception hierarchy shared across the package.

Every error raised on a documented contract boundary derives from
:class:`FragVqaError` so the CLI can map failures to stable,
machine-readable error classes.
"""


class FragVqaError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class DecodeError(FragVqaError):
    """A clip file could not be read or decoded."""

    exit_code = 4


class EmptyClipError(DecodeError):
    """A clip decoded to zero frames."""


class ConfigurationError(FragVqaError):
    """Invalid or inconsistent configuration values."""

    exit_code = 3


class ContractError(FragVqaError):
    """An operation was called with arguments violating its contract."""

    exit_code = 3


class PartitionError(ContractError):
    """Grid partition is impossible for the given frame size."""


class FragmentInfeasibleError(ContractError):
    """A grid cell is too small to contain one mini-patch."""


class DegenerateSeriesError(ContractError):
    """A correlation was requested for a constant (zero-variance) series."""


class CheckpointError(FragVqaError):
    """A checkpoint could not be loaded against the requested model."""

    exit_code = 3


class TrainingDivergedError(FragVqaError):
    """Training aborted on a non-finite loss."""

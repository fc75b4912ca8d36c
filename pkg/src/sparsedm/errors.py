"""Exception taxonomy shared across the package.

Every failure surfaced to callers is one of these, so the CLI can map any
expected error to a one-line category message without pattern matching.
"""

from __future__ import annotations


class SparseDmError(Exception):
    """Base class for all package errors."""

    category = "internal"


class ShapeError(SparseDmError):
    """Operands have incompatible shapes for the requested op."""

    category = "shape"


class SparsityError(SparseDmError):
    """A sparsity level or topology request is out of range or infeasible."""

    category = "sparsity"


class CapacityError(SparsityError):
    """A growth request exceeds the number of inactive positions."""

    category = "capacity"


class ConfigError(SparseDmError):
    """A config file or config value is invalid."""

    category = "config"


class DataError(SparseDmError):
    """A dataset name or dataset payload is invalid."""

    category = "data"


class CheckpointError(SparseDmError):
    """A checkpoint file cannot be read or written."""

    category = "checkpoint"


class BadMagicError(CheckpointError):
    """The file does not start with the expected magic bytes."""


class UnsupportedVersionError(CheckpointError):
    """The file declares a format version this build does not understand."""


class TruncatedCheckpointError(CheckpointError):
    """The file ends before the declared records are complete."""

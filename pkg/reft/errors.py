"""
Exception hierarchy for reft-sim.

Library code raises these; the tools layer turns them into
``{"status": "error", ...}`` results.
"""

from typing import Optional


class ReftError(Exception):
    """Root of every error raised by the reft package."""


class ConfigurationError(ReftError, ValueError):
    """Invalid cluster or experiment configuration."""

    def __init__(self, message: str, field: Optional[str] = None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class CapacityError(ReftError):
    """Host-memory snapshot capacity would be exceeded."""


class SnapshotStateError(ReftError):
    """Snapshot lifecycle misuse (overlapping writes, premature commit, ...)."""


class CorruptCheckpointError(ReftError):
    """Checksum or structural mismatch while reading a checkpoint file."""

    def __init__(self, message: str, shard: Optional[str] = None):
        self.shard = shard
        super().__init__(message)


class CodecError(ReftError, ValueError):
    """Erasure-coding or optimizer-recompute input mismatch."""


class ProtectionUnavailableError(ReftError):
    """A protection strategy cannot be applied to this sharding group."""


class UnrecoverableError(ReftError):
    """Lost shards cannot be rebuilt from in-memory redundancy."""

    def __init__(self, message: str, missing: Optional[list] = None):
        self.missing = missing or []
        super().__init__(message)


class IllegalTransitionError(ReftError):
    """A node signal transition outside the allowed graph."""


class TraceError(ReftError):
    """A schedule or simulation trace lacks the records an analysis needs."""

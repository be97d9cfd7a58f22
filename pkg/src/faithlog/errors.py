"""Exception types shared across the package."""


class FaithLogError(Exception):
    """Base class for all package errors."""


class ConfigError(FaithLogError, ValueError):
    pass


class DatasetError(FaithLogError, ValueError):
    """Malformed or invariant-violating dataset content."""

    def __init__(self, message, line_no=None, sequence_id=None):
        self.line_no = line_no
        self.sequence_id = sequence_id
        parts = []
        if line_no is not None:
            parts.append(f"line {line_no}")
        if sequence_id is not None:
            parts.append(f"sequence {sequence_id!r}")
        prefix = ", ".join(parts)
        super().__init__(f"{prefix}: {message}" if prefix else message)


class ShapeError(FaithLogError, ValueError):
    pass


class VocabularyError(FaithLogError, KeyError):
    pass


class CheckpointError(FaithLogError):
    """Checkpoint does not match the requested configuration."""

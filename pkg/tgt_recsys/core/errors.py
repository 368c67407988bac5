from __future__ import annotations


class DimensionError(ValueError):
    """Raised when tensor shapes are incompatible with an operation."""


class ContractError(ValueError):
    """Raised when an operation is called outside its preconditions."""


class ConfigError(ValueError):
    """Raised for unknown configuration keys, invalid values or conflicting flags."""


class DataError(ValueError):
    """Base class for problems with input data and persisted artifacts."""


class ParseError(DataError):
    """A malformed line in an interactions or vocabulary file.

    Args:
        line: 1-based line number of the offending line.
        reason: Human readable description of the problem.
    """

    def __init__(self, line: int, reason: str) -> None:
        super().__init__(f"line {line}: {reason}")
        self.line = line


class VocabularyError(DataError):
    """A behavior label that is not declared in the vocabulary, or a duplicated one."""


class SamplingError(DataError):
    """Raised when a sampler has an empty candidate pool."""


class UnknownUserError(DataError):
    """Raised when a user label is not present in the ingested data."""


class CheckpointFormatError(DataError):
    """The checkpoint does not start with the expected magic bytes."""


class CheckpointCorruptionError(DataError):
    """The checkpoint ends early or holds inconsistent records.

    Args:
        offset: Byte offset at which reading failed.
        reason: Description of the inconsistency.
    """

    def __init__(self, offset: int, reason: str) -> None:
        super().__init__(f"corrupted checkpoint at byte {offset}: {reason}")
        self.offset = offset


class NumericError(ArithmeticError):
    """Raised when training produces a non-finite loss or gradient."""

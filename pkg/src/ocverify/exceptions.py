"""Exceptions for ocverify errors."""

from typing import Optional


class OcverifyError(Exception):
    """Base class for exceptions."""

    def __init__(self, message: str) -> None:
        super().__init__(message)
        self.message = message


class ImageError(OcverifyError):
    """Raised when an image is malformed or too small for an operation."""


class DecodeError(ImageError):
    """Raised when an image byte stream cannot be parsed.

    :param message: Description of the failure.
    :type message: str

    :param offset: Byte offset where parsing failed.
    :type offset: int
    """

    def __init__(self, message: str, offset: int = 0) -> None:
        super().__init__(message="%s (at byte offset %d)" % (message, offset))
        self.offset = offset


class ConfigurationError(OcverifyError):
    """Raised when a configuration value or combination is invalid."""


class ShapeError(OcverifyError):
    """Raised when a tensor does not have the shape a layer expects."""

    def __init__(self, message: str, layer: str) -> None:
        super().__init__(message="%s: %s" % (layer, message))
        self.layer = layer


class StaleCacheError(OcverifyError):
    """Raised when backward is called without a matching forward cache."""


class TrainingError(OcverifyError):
    """Raised when training produces a non-finite value."""

    def __init__(self, message: str, step: Optional[int] = None) -> None:
        if step is not None:
            message = "%s (step %d)" % (message, step)
        super().__init__(message)
        self.step = step


class SamplingError(OcverifyError):
    """Raised when a dataset cannot produce valid pairs or triplets."""


class DatasetError(OcverifyError):
    """Raised when a dataset view, manifest or file name is unusable."""


class EvaluationError(OcverifyError):
    """Raised when evaluation input is empty or malformed."""


class ModelFileError(OcverifyError):
    """Raised when a model file cannot be read or written."""


class StorageError(OcverifyError):
    """Raised when the embedding database cannot be read or written."""


class DimensionMismatchError(StorageError):
    """Raised when a record's dimension differs from stored same-tag records."""


class CorruptDatabaseError(StorageError):
    """Raised when the database file or its contents are inconsistent."""


class InputError(OcverifyError):
    """Raised when pipeline input cannot be decoded."""

"""Exception hierarchy shared by all voxcnn modules."""


class VoxcnnError(Exception):
    """Base class for all package errors."""


class ShapeError(VoxcnnError):
    """Array dimensions incompatible with the requested operation."""


class SpecError(VoxcnnError):
    """A model/layer specification is malformed or does not compose."""


class InputError(VoxcnnError):
    """An argument is outside its documented domain."""


class DataError(VoxcnnError):
    """Input data violates a numeric precondition (e.g. constant volume)."""


class NumericError(VoxcnnError):
    """Non-finite values appeared where finite values are required."""


class StorageError(VoxcnnError):
    """Base class for record-file problems."""


class FormatError(StorageError):
    """Bad magic bytes or otherwise unparseable record."""


class VersionError(StorageError):
    """Record written by an unsupported format version."""


class ChecksumError(StorageError):
    """Payload failed its CRC check."""


class TruncationError(StorageError):
    """Record file ended before all declared bytes were read."""

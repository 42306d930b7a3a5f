"""Exception types raised across the package."""


class LmtcnnError(Exception):
    """Base class for every error raised by this package."""


class ShapeMismatch(LmtcnnError, ValueError):
    pass


class ZeroOrNegativeExtent(LmtcnnError, ValueError):
    pass


class EmptyRange(LmtcnnError, ValueError):
    pass


class KernelLargerThanInput(LmtcnnError, ValueError):
    pass


class WindowLargerThanInput(LmtcnnError, ValueError):
    pass


class InvalidRate(LmtcnnError, ValueError):
    pass


class InvalidMultiplier(LmtcnnError, ValueError):
    pass


class InputTooSmall(LmtcnnError, ValueError):
    pass


class EmptyImage(LmtcnnError, ValueError):
    pass


class CropTooLarge(LmtcnnError, ValueError):
    pass


class EmptyList(LmtcnnError, ValueError):
    pass


class LengthMismatch(LmtcnnError, ValueError):
    pass


class TooFewRecords(LmtcnnError, ValueError):
    pass


class LabelOutOfRange(LmtcnnError, ValueError):
    pass


class EmptyIndexSet(LmtcnnError, ValueError):
    pass


class ManifestError(LmtcnnError, ValueError):
    pass


class ModelFormatError(LmtcnnError):
    """A model file could not be decoded."""


class BadMagic(ModelFormatError):
    pass


class UnsupportedVersion(ModelFormatError):
    pass


class ChecksumMismatch(ModelFormatError):
    pass


class TruncatedFile(ModelFormatError):
    pass


class IoFailure(LmtcnnError, OSError):
    pass

"""Exception hierarchy.

Every error raised on bad input derives from :class:`ValidationError`; the
CLI maps those to exit code 2.
"""


class HyperfuseError(Exception):
    """Base class for all package errors."""


class ValidationError(HyperfuseError, ValueError):
    """Input violated a documented precondition."""


# cube_io
class MissingKey(ValidationError):
    def __init__(self, name):
        super().__init__(f"missing header key: {name!r}")
        self.name = name


class MalformedValue(ValidationError):
    def __init__(self, key, value=None):
        msg = f"malformed value for key {key!r}"
        if value is not None:
            msg += f": {value!r}"
        super().__init__(msg)
        self.key = key


class WavelengthCountMismatch(ValidationError):
    pass


class SizeMismatch(ValidationError):
    pass


class UnsupportedDataType(ValidationError):
    pass


class WavelengthOutOfRange(ValidationError):
    pass


# radiometry
class TargetOutOfRange(ValidationError):
    def __init__(self, wavelength):
        super().__init__(f"target wavelength {wavelength} nm outside source range")
        self.wavelength = wavelength


class RoiOutOfBounds(ValidationError):
    pass


class ZeroTarpSignal(ValidationError):
    def __init__(self, band):
        super().__init__(f"tarp ROI mean DN is <= 0 in band {band}")
        self.band = band


class UnitsMismatch(ValidationError):
    pass


# cloud
class MalformedHeader(ValidationError):
    pass


class UnsupportedProperty(ValidationError):
    pass


class TruncatedPayload(ValidationError):
    pass


class TooFewPoints(ValidationError):
    pass


class NoDescriptors(ValidationError):
    pass


class CountExceedsVocabulary(ValidationError):
    pass


# features
class ImageTooSmall(ValidationError):
    pass


# registration
class VocabularyTooSmall(ValidationError):
    pass


class DegenerateConfiguration(ValidationError):
    pass


class TooFewCorrespondences(ValidationError):
    pass


# fusion
class ModelNotAccepted(ValidationError):
    pass


class NonInvertibleGeoTransform(ValidationError):
    pass


class IoFailure(HyperfuseError, OSError):
    pass


class ConfigError(ValidationError):
    pass

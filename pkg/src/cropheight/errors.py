"""Exception hierarchy shared by every stage of the pipeline."""


class CropHeightError(ValueError):
    """Base class for all errors raised by cropheight."""


class InvalidPoseError(CropHeightError):
    pass


class InsufficientPointsError(CropHeightError):
    pass


class DegenerateInputError(CropHeightError):
    pass


class NoGroundFoundError(CropHeightError):
    pass


class AmbiguousPlaneError(CropHeightError):
    pass


class DegeneratePlotError(CropHeightError):
    pass


class InvalidGridError(CropHeightError):
    pass


class InvalidSpecError(CropHeightError):
    pass


class OutOfTerrainError(CropHeightError):
    pass


class PairingError(CropHeightError):
    pass


class ConfigError(CropHeightError):
    pass


class PlyFormatError(CropHeightError):
    pass

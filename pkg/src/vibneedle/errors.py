"""Exception hierarchy shared by every module."""


class VibNeedleError(Exception):
    """Base class for all package errors."""


class DataError(VibNeedleError):
    """Input data is malformed or inconsistent (CLI exit code 3)."""


class ShapeMismatch(VibNeedleError, ValueError):
    pass


class NyquistViolation(VibNeedleError, ValueError):
    pass


class InvalidProfile(VibNeedleError, ValueError):
    pass


class BinOutOfRange(VibNeedleError, ValueError):
    pass


class WindowLengthMismatch(VibNeedleError, ValueError):
    pass


class InvalidWindowing(VibNeedleError, ValueError):
    pass


class Uninitialized(VibNeedleError, RuntimeError):
    pass


class NonBinaryTarget(VibNeedleError, ValueError):
    pass


class DimensionMismatch(VibNeedleError, ValueError):
    pass


class VideoTooShort(VibNeedleError, ValueError):
    pass


class EmptyDataset(VibNeedleError, ValueError):
    pass


class NonFiniteLoss(VibNeedleError, FloatingPointError):
    pass


class InsufficientPoints(VibNeedleError, ValueError):
    pass


class DegenerateInput(VibNeedleError, ValueError):
    pass


class EmptyMask(VibNeedleError, ValueError):
    pass


class EmptyRecordSet(VibNeedleError, ValueError):
    pass


class TipOutOfImage(VibNeedleError, ValueError):
    pass


class DegenerateSegment(VibNeedleError, ValueError):
    pass


class TooFewVideos(VibNeedleError, ValueError):
    pass


class BudgetExceeded(VibNeedleError):
    pass

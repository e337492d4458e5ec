"""Exception hierarchy shared by every module of the package."""


class BRMError(Exception):
    """Base class for all errors raised by brm_embed."""


class DegenerateNorm(BRMError, ValueError):
    pass


class DimensionMismatch(BRMError, ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    pass


class NotNormalized(BRMError, ValueError):
    pass


class BatchTooSmall(BRMError, ValueError):
    pass


class EmptyPairSet(BRMError, ValueError):
    """A positive or negative pair set is empty; the batch must be resampled."""

    def __init__(self, which: str):
        super().__init__(f"empty {which} pair set")
        self.which = which


class NoValidTriplet(BRMError, ValueError):
    pass


class NoNegativePartner(BRMError, ValueError):
    pass


class CacheMismatch(BRMError, ValueError):
    pass


class InvalidConfig(BRMError, ValueError):
    pass


class NotSquare(BRMError, ValueError):
    pass


class InsufficientClassSamples(BRMError, ValueError):
    pass


class MalformedFile(BRMError, ValueError):
    """A data or checkpoint file could not be parsed."""


class BadMagic(MalformedFile):
    pass


class TruncatedFile(MalformedFile):
    pass


class LabelOutOfRange(BRMError, ValueError):
    pass


class EmptyTrainSet(BRMError, ValueError):
    pass


class SingleClass(BRMError, ValueError):
    pass

"""Exception types raised across the package."""


class GlotError(Exception):
    """Base class for all package errors."""


class DegenerateRotation(GlotError, ValueError):
    pass


class DegenerateCloud(GlotError, ValueError):
    pass


class ShapeMismatch(GlotError, ValueError):
    pass


class SequenceTooShort(GlotError, ValueError):
    pass


class IndexMismatch(GlotError, ValueError):
    pass


class EmptyInput(GlotError, ValueError):
    pass


class EmptyMemory(GlotError, ValueError):
    pass


class TopologyError(GlotError, ValueError):
    pass


class NaNGradient(GlotError, FloatingPointError):
    pass


class NaNLoss(GlotError, FloatingPointError):
    pass


class CorruptFile(GlotError, IOError):
    pass


class VersionMismatch(GlotError, IOError):
    pass


class ConfigMismatch(GlotError, ValueError):
    pass


class IndexOutOfRange(GlotError, IndexError):
    pass

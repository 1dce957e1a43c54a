"""Exception hierarchy shared across the package."""


class MclError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(MclError, ValueError):
    """Tensor/matrix dimensions do not conform."""


class ModeIndexError(MclError, IndexError):
    """Mode index outside the tensor's rank."""


class DimsError(MclError, ValueError):
    """Measurement dims outside the allowed range."""


class NumericError(MclError, ArithmeticError):
    """Non-finite values or a failed numeric routine."""


class FormatError(MclError, ValueError):
    """Malformed file: dataset records, traces, or model containers."""


class PacketError(MclError, ValueError):
    """Base class for measurement-packet decode failures."""


class BadMagicError(PacketError):
    pass


class BadVersionError(PacketError):
    pass


class LengthMismatchError(PacketError):
    pass


class CrcError(PacketError):
    pass

"""Exception types shared across the package."""


class SymplaneError(Exception):
    """Base class for all library errors."""


class ParseError(SymplaneError):
    """A mesh or data file could not be parsed."""


class EmptyMeshError(SymplaneError):
    """The mesh has no faces."""


class DegenerateMeshError(SymplaneError):
    """The mesh has zero extent or zero total surface area."""


class FormatError(SymplaneError):
    """A binary container violates its declared format."""


class ChecksumError(FormatError):
    """Payload checksum mismatch in a binary container."""


class DimensionMismatchError(SymplaneError):
    """Feature dimensions of inputs do not agree."""


class PairingError(SymplaneError):
    """Fragment buffers and feature maps cannot be paired 1:1."""


class UncoveredFaceError(SymplaneError):
    """A sample lies on a face with uncovered vertices."""


class TooFewPointsError(SymplaneError):
    """Not enough points for the requested operation."""


class EmptySetError(SymplaneError):
    """An operation received an empty point set."""


class EmptyCloudError(SymplaneError):
    """An operation received an empty feature cloud."""

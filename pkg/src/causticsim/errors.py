"""Exception hierarchy shared by every module."""

from __future__ import annotations


class CausticSimError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(CausticSimError, ValueError):
    """An invariant on an input value was violated.

    ``field`` names the offending field path (``"objects[2].object_id"``).
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class ParseError(CausticSimError, ValueError):
    """A file could not be parsed into the expected schema."""


class MissingAssetError(CausticSimError, KeyError):
    """A catalog key does not resolve to an asset."""

    def __str__(self) -> str:  # KeyError quotes its argument otherwise
        return str(self.args[0]) if self.args else ""


class DomainError(CausticSimError, ValueError):
    """A numeric argument lies outside the function's domain."""


class PlacementError(CausticSimError, RuntimeError):
    """Rejection sampling ran out of attempts while placing objects."""


class RenderError(CausticSimError, RuntimeError):
    """Rendering could not proceed (bad camera index, empty geometry, ...)."""


class DimensionError(CausticSimError, ValueError):
    """Raster dimensions disagree or exceed what an encoder supports."""


class PairingError(CausticSimError, ValueError):
    """Two radiance images are not a valid caustics on/off pair."""

"""Exception hierarchy shared by every ctscroll layer."""

from __future__ import annotations


class CTScrollError(Exception):
    """Base class for all ctscroll failures."""

    exit_code: int = 1


class ConfigError(CTScrollError):
    """Raised when a configuration file or value is invalid."""

    exit_code = 2


class NumericError(CTScrollError):
    """Raised on non-finite losses or gradients."""

    exit_code = 3


class VolumeIOError(CTScrollError):
    """Raised when a volume, checkpoint or table cannot be read or written."""

    exit_code = 4


class VolumeError(CTScrollError):
    """Raised when a volume violates a preprocessing precondition."""

    exit_code = 2


class ShapeError(CTScrollError):
    """Raised when tensor shapes do not line up."""

    exit_code = 3


class MaskError(CTScrollError):
    """Raised when an attention mask is requested with invalid parameters."""

    exit_code = 2

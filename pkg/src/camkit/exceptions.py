"""Exception types shared across the package."""


class CamKitError(Exception):
    """Base class for all camkit errors."""


class ModelFormatError(CamKitError):
    """Raised when a .camf file is malformed, truncated or inconsistent."""


class NumericsError(CamKitError):
    """Raised when a computation produces non-finite values."""

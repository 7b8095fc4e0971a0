"""Exception hierarchy shared across the package."""


class HandEmgError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(HandEmgError, ValueError):
    """An argument violates a documented precondition."""


class DegenerateGeometryError(InvalidInputError):
    """Geometric construction is ill-posed (collinear markers, coincident points)."""


class ConfigurationError(HandEmgError, ValueError):
    """A configuration value is inconsistent or unresolvable."""


class DataFormatError(HandEmgError):
    """A persisted file is malformed. ``kind`` names the failure category."""

    def __init__(self, kind: str, detail: str):
        super().__init__(f"{kind}: {detail}")
        self.kind = kind
        self.detail = detail

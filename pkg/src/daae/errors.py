"""Exception hierarchy shared by every daae module."""


class DaaeError(Exception):
    """Base class for all daae errors."""


class ShapeError(DaaeError):
    """Operands have incompatible shapes or dimensions."""


class DomainError(DaaeError):
    """A value lies outside the mathematical domain of an operation."""


class ContractError(DaaeError):
    """A caller violated an API precondition (non-scalar loss, missing grad, ...)."""


class ConfigError(DaaeError):
    """A configuration value is invalid or inconsistent."""


class ProtocolError(DaaeError):
    """An operation was applied to a model variant that does not support it."""


class IngestError(DaaeError):
    """Raw data could not be ingested (missing file, conflicting labels, ...)."""


class PreprocessingRejected(DaaeError):
    """An image failed identifier-patch removal and was excluded."""

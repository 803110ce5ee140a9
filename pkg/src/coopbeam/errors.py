"""Exception types shared across the package."""


class CoopbeamError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(CoopbeamError):
    """A scenario, model, or training configuration is invalid."""


class DataFormatError(CoopbeamError):
    """A binary dataset or checkpoint file is malformed or truncated."""


class GenerationAuditError(CoopbeamError):
    """A generation-time consistency check on labels or gains failed."""


class DivergedError(CoopbeamError):
    """Training produced a non-finite loss or gradient."""

"""Exception types shared across the workbench."""


class PcldError(Exception):
    """Base class for all workbench errors."""


class DomainError(PcldError, ValueError):
    """An argument violates an operation's precondition."""


class FormatError(PcldError, ValueError):
    """A file or blob does not conform to its on-disk format."""


class ConfigError(PcldError, ValueError):
    """A configuration object is inconsistent with the artifacts it references."""


class NumericError(PcldError, RuntimeError):
    """A numerical computation produced non-finite values."""

"""Exception hierarchy shared across the package."""


class ZmaskError(Exception):
    """Base class for all package-specific errors."""


class FormatError(ZmaskError):
    """A file does not conform to its declared on-disk format."""


class UnsupportedDtypeError(FormatError):
    """An array file uses an element type the pipeline does not accept."""


class DataError(ZmaskError):
    """Well-formed input carries values that violate an invariant (NaN/Inf, bad range)."""


class ConfigError(ZmaskError):
    """A configuration file or CLI argument is missing, malformed, or inconsistent."""


class DivergenceError(ZmaskError):
    """An optimization produced non-finite values and was aborted."""

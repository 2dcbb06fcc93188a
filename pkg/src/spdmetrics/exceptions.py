"""Exception hierarchy shared across the package."""


class SpdMetricsError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(SpdMetricsError, ValueError):
    """An input array violates a structural precondition (shape, finiteness)."""


class NotPositiveDefinite(InvalidInput):
    """A matrix that must be SPD has an eigenvalue at or below tolerance."""


class InvalidParameter(InvalidInput):
    """A parameter (base vector, layer weight) violates its constraints."""


class DegenerateSpectrum(SpdMetricsError):
    """Closed-form eigen differentials requested on a near-degenerate spectrum."""


class ConfigError(SpdMetricsError, ValueError):
    """Inconsistent or unparseable run/network configuration."""


class DatasetError(SpdMetricsError):
    """Base class for dataset file problems."""


class BadMagic(DatasetError):
    """File does not start with the expected magic bytes."""


class DimensionMismatch(DatasetError):
    """Matrix dimensions disagree with the file header or the model."""


class StratificationError(DatasetError):
    """A class has too few samples for a stratified split."""

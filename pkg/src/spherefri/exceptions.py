"""Exception types raised by the reconstruction pipeline.

All of them derive from :class:`ValueError` so callers that only care about
"bad input or unrecoverable configuration" can catch a single type.
"""


class SphereFRIError(ValueError):
    """Base class for all library errors."""


class BandwidthError(SphereFRIError):
    """Bandwidth too small for the requested number of spikes or corruptions."""


class RankDeficiencyError(SphereFRIError):
    """A linear system that should be full rank is numerically singular."""


class DegenerateConfigurationError(SphereFRIError):
    """Spike configuration the annihilating filter cannot resolve."""


class UnreliableRecoveryError(SphereFRIError):
    """Recovered roots or parameters are outside their admissible range."""


class KernelInversionError(SphereFRIError):
    """A zonal kernel vanishes on part of the band and cannot be divided out."""

    def __init__(self, message, degrees=()):
        super().__init__(message)
        self.degrees = tuple(degrees)

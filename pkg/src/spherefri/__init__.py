"""Recovery of weighted spike ensembles on the sphere from lowpass samples."""

from .exceptions import (
    BandwidthError,
    DegenerateConfigurationError,
    KernelInversionError,
    RankDeficiencyError,
    SphereFRIError,
    UnreliableRecoveryError,
)
from .fri import max_recoverable_diracs, min_bandwidth, recover_diracs, refine_least_squares
from .sphere import DiracEnsemble, EulerRotation, SphericalPoint, SpectrumTriangle, dirac_spectrum
from .transform import SampleSet, spectrum_from_samples, synthesize_samples

__version__ = "0.1.0"

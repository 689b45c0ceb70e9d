"""Localization of instantaneous diffusive sources on the sphere.

Sources released together at ``t = 0`` diffuse with constant ``k``. At time
``t0`` each spectral coefficient of the field has been attenuated by
``exp(-l (l+1) k t0)``; dividing that out leaves the spike spectrum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..exceptions import KernelInversionError
from ..fri import recover_diracs
from ..sphere import DiracEnsemble, SpectrumTriangle, dirac_spectrum, triangle_lm
from ..transform import SampleSet, synthesize_samples

MIN_ATTENUATION = 1e-12
TAIL_CUTOFF = 1e-30


@dataclass(frozen=True)
class DiffusionConfig:
    """Diffusion constant ``k`` (1/time), observation time ``t0``, bandwidth ``L`` and source count ``K``."""

    k: float
    t0: float
    L: int = 7
    K: int = 1

    def __post_init__(self):
        if not self.k > 0 or not self.t0 > 0:
            raise ValueError("k and t0 must be positive")
        if self.L < 2 or self.K < 1:
            raise ValueError("need L >= 2 and K >= 1")


def attenuation(k: float, t0: float, degrees) -> np.ndarray:
    l = np.asarray(degrees, dtype=float)
    return np.exp(-l * (l + 1) * k * t0)


def diffusion_kernel_spectrum(cfg: DiffusionConfig) -> np.ndarray:
    """Per-degree attenuation ``exp(-l (l+1) k t0)`` for ``l < L``."""
    return attenuation(cfg.k, cfg.t0, np.arange(cfg.L))


def zonal_kernel(cfg: DiffusionConfig) -> np.ndarray:
    """The attenuation expressed as zonal coefficients for :func:`convolve_spectra`."""
    l = np.arange(cfg.L)
    return np.sqrt((2 * l + 1) / (4 * np.pi)) * diffusion_kernel_spectrum(cfg)


def aliasing_energy(k: float, t0: float, L) -> np.ndarray | float:
    """Fraction of kernel energy at degrees ``>= L``.

    Uses the weights ``exp(-2 l (l+1) k t0) / (2l+1)``; the series is summed
    until its terms drop below 1e-30.
    """
    Ls = np.atleast_1d(np.asarray(L, dtype=int))
    if np.any(Ls < 0):
        raise ValueError("L must be non-negative")
    top = max(int(Ls.max()) + 1, 2)
    # grow until the terms are negligible
    while math.exp(-2 * top * (top + 1) * k * t0) / (2 * top + 1) > TAIL_CUTOFF:
        top *= 2
    l = np.arange(top + 1)
    w = np.exp(-2 * l * (l + 1) * k * t0) / (2 * l + 1)
    tail = np.cumsum(w[::-1])[::-1]
    out = tail[Ls] / tail[0]
    return float(out[0]) if np.ndim(L) == 0 else out


def series_degree(cfg: DiffusionConfig) -> int:
    """First degree whose attenuation is below machine precision."""
    l = 1
    while attenuation(cfg.k, cfg.t0, l) > 1e-17:
        l += 1
    return l


def diffused_spectrum(sources: DiracEnsemble, cfg: DiffusionConfig, L: int | None = None) -> SpectrumTriangle:
    """Field spectrum at ``t0`` up to band ``L`` (default ``cfg.L``)."""
    L = cfg.L if L is None else L
    fhat = dirac_spectrum(sources, L)
    l, _ = triangle_lm(L)
    return SpectrumTriangle(fhat.coeffs * attenuation(cfg.k, cfg.t0, l))


def simulate_diffusion(sources: DiracEnsemble, theta, phi, cfg: DiffusionConfig, bandlimited: bool = False) -> SampleSet:
    """Field samples at ``t0``.

    The full field keeps every degree whose attenuation exceeds machine
    precision; ``bandlimited=True`` keeps only ``l < cfg.L``.
    """
    L = cfg.L if bandlimited else max(cfg.L, series_degree(cfg))
    return synthesize_samples(diffused_spectrum(sources, cfg, L), theta, phi)


def localize_diffusion_sources(samples: SampleSet, cfg: DiffusionConfig, rng: np.random.Generator, **kwargs) -> DiracEnsemble:
    """Release locations and strengths of ``cfg.K`` sources from field samples at ``t0``."""
    att = diffusion_kernel_spectrum(cfg)
    weak = np.flatnonzero(att < MIN_ATTENUATION)
    if weak.size:
        raise KernelInversionError(
            f"attenuation below {MIN_ATTENUATION:g} at degrees {weak.tolist()}; lower L or t0", weak
        )
    return recover_diracs(samples, cfg.L, cfg.K, rng, kernel=zonal_kernel(cfg), **kwargs)

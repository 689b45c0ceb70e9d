"""Applications built on spike recovery: diffusion sources, shot noise, sound sources."""

from .acoustics import SoundSource, SSLConfig, localize_sound_sources, simulate_array, ssl_kernel_spectrum
from .diffusion import DiffusionConfig, aliasing_energy, localize_diffusion_sources, simulate_diffusion
from .shotnoise import (
    Corruption,
    ShotNoiseConfig,
    detect_shot_noise,
    max_correctable_corruptions,
    remove_shot_noise,
)

__all__ = [
    "Corruption",
    "DiffusionConfig",
    "SSLConfig",
    "ShotNoiseConfig",
    "SoundSource",
    "aliasing_energy",
    "detect_shot_noise",
    "localize_diffusion_sources",
    "localize_sound_sources",
    "max_correctable_corruptions",
    "remove_shot_noise",
    "simulate_array",
    "simulate_diffusion",
    "ssl_kernel_spectrum",
]

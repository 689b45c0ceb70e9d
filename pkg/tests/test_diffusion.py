import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from spherefri.apps.diffusion import (
    DiffusionConfig,
    aliasing_energy,
    attenuation,
    diffused_spectrum,
    localize_diffusion_sources,
    simulate_diffusion,
    zonal_kernel,
)
from spherefri.estimation import match_and_mse
from spherefri.exceptions import KernelInversionError
from spherefri.sphere import DiracEnsemble, convolve_spectra, dirac_spectrum
from spherefri.transform import fibonacci_sphere_points

CFG = DiffusionConfig(k=0.1, t0=1.0, L=7, K=2)


def test_attenuation_values():
    assert attenuation(0.1, 1.0, [0, 1, 2]) == pytest.approx(np.exp([0.0, -0.2, -0.6]))


def test_zonal_kernel_matches_spectrum_attenuation(rng):
    f = DiracEnsemble.random(2, rng, amplitudes="real")
    via_kernel = convolve_spectra(dirac_spectrum(f, 7), zonal_kernel(CFG))
    assert np.allclose(via_kernel.coeffs, diffused_spectrum(f, CFG).coeffs, atol=1e-14)


def test_aliasing_matches_oracle(oracle):
    table = np.array(oracle["aliasing_k0.1"])
    ours = aliasing_energy(0.1, 1.0, table[:, 0].astype(int))
    assert ours == pytest.approx(table[:, 1], rel=1e-10)
    assert aliasing_energy(0.1, 1.0, 0) == pytest.approx(1.0)


@given(st.floats(0.01, 2.0), st.floats(0.1, 5.0))
def test_aliasing_decreasing(k, t0):
    eps = aliasing_energy(k, t0, np.arange(0, 8))
    assert np.all(np.diff(eps) <= 0)
    positive = eps[eps > 0]
    assert np.all(np.diff(positive) < 0)


def test_bandlimited_simulation_is_exact(rng):
    f = DiracEnsemble.random(2, rng, amplitudes="real")
    theta, phi = fibonacci_sphere_points(49)
    samples = simulate_diffusion(f, theta, phi, CFG, bandlimited=True)
    est = localize_diffusion_sources(samples, CFG, rng, refine="gauss-newton")
    m = match_and_mse(f, est)
    assert m.max_angle < 1e-8
    assert m.max_relative_amplitude < 1e-8


def test_full_field_differs_only_by_aliasing(rng):
    f = DiracEnsemble.random(2, rng, amplitudes="real")
    theta, phi = fibonacci_sphere_points(49)
    full = simulate_diffusion(f, theta, phi, CFG)
    band = simulate_diffusion(f, theta, phi, CFG, bandlimited=True)
    rel = np.linalg.norm(full.values - band.values) / np.linalg.norm(band.values)
    assert 0 < rel < 1e-2


def test_excessive_attenuation_rejected(rng):
    cfg = DiffusionConfig(k=5.0, t0=10.0, L=7, K=1)
    theta, phi = fibonacci_sphere_points(49)
    samples = simulate_diffusion(DiracEnsemble([1.0], [1.0], [1.0]), theta, phi, cfg, bandlimited=True)
    with pytest.raises(KernelInversionError):
        localize_diffusion_sources(samples, cfg, rng)


def test_config_validation():
    with pytest.raises(ValueError):
        DiffusionConfig(k=0.0, t0=1.0)


def test_attenuation_examples():
    assert attenuation(0.3, 2.0, 0) == 1.0
    assert attenuation(0.1, 1.0, 1) == pytest.approx(0.8187, abs=1e-4)
    assert np.all(np.diff(attenuation(0.1, 1.0, np.arange(10))) < 0)
    assert aliasing_energy(0.1, 1.0, 1) < 1


def test_slow_diffusion_three_sources():
    # at k=0.01 three percent of the kernel energy lies beyond L=7, so the
    # field is simulated at the working bandwidth
    cfg = DiffusionConfig(k=0.01, t0=1.0, L=7, K=3)
    theta, phi = fibonacci_sphere_points(49)
    from spherefri.estimation import NoiseModel, add_noise

    errors = []
    for trial in range(40):
        rng = np.random.default_rng([1, trial])
        f = DiracEnsemble.random(3, rng, amplitudes="real")
        samples = add_noise(simulate_diffusion(f, theta, phi, cfg, bandlimited=True), NoiseModel(snr_db=30.0), rng)
        est = localize_diffusion_sources(samples, cfg, rng, refine="gauss-newton", imag_tol=0.1)
        errors.append(match_and_mse(f, est).max_angle)
    assert np.median(errors) < 0.05
    assert np.mean(np.array(errors) < 0.1) >= 0.8

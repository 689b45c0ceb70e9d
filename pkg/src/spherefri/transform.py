"""Conversions between spatial samples and spherical-harmonic spectra.

Two routes are provided: a least-squares inversion of the harmonic sampling
matrix at arbitrary points, and the equiangular 2L' x 2L' grid with exact
colatitude quadrature weights.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .exceptions import RankDeficiencyError
from .sphere import (
    TWO_PI,
    SpectrumTriangle,
    clamp_colatitude,
    harmonic_matrix,
    normalized_legendre,
    wrap_azimuth,
)

MAX_CONDITION = 1e12


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Complex samples ``values[n]`` taken at ``(theta[n], phi[n])``."""

    theta: np.ndarray
    phi: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        theta = np.array(clamp_colatitude(np.ravel(self.theta)), dtype=float)
        phi = np.array(wrap_azimuth(np.ravel(self.phi)), dtype=float)
        values = np.array(np.ravel(self.values), dtype=complex)
        if not (theta.size == phi.size == values.size):
            raise ValueError("theta, phi and values must have equal length")
        if theta.size < 1:
            raise ValueError("a sample set needs at least one sample")
        for a in (theta, phi, values):
            a.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "values", values)

    @property
    def N(self) -> int:
        return self.values.size

    def with_values(self, values) -> "SampleSet":
        return SampleSet(self.theta, self.phi, values)


def random_sphere_points(n: int, rng: np.random.Generator):
    """``n`` i.i.d. uniform points: ``cos(theta) ~ U[-1, 1]``, ``phi ~ U[0, 2pi)``."""
    if n < 1:
        raise ValueError("n must be positive")
    z = rng.uniform(-1.0, 1.0, n)
    phi = rng.uniform(0.0, TWO_PI, n)
    return np.arccos(z), phi


def fibonacci_sphere_points(n: int):
    """``n`` quasi-uniform points on a golden-angle spiral.

    With ``n = L^2`` the harmonic matrix is far better conditioned than for
    i.i.d. points (about 8 against 1e3 to 1e5 at ``L = 7``), which matters
    once the samples are noisy.
    """
    if n < 1:
        raise ValueError("n must be positive")
    i = np.arange(n) + 0.5
    theta = np.arccos(1.0 - 2.0 * i / n)
    phi = np.mod(np.pi * (1.0 + math.sqrt(5.0)) * i, TWO_PI)
    return theta, phi


def build_sampling_matrix(theta, phi, L: int) -> np.ndarray:
    """``N x L^2`` matrix of harmonics evaluated at the sample points."""
    return harmonic_matrix(L, theta, phi)


def spectrum_from_samples(
    samples: SampleSet, L: int, rcond: float = 1e-12, method: str = "auto"
) -> SpectrumTriangle:
    """Least-squares spectrum of a bandwidth-``L`` signal from scattered samples.

    ``method="svd"`` applies the pseudoinverse with relative singular-value
    cutoff ``rcond``. ``method="lu"`` needs exactly ``L**2`` samples and solves
    the square system by pivoted LU, with the condition number estimated by
    LAPACK in the 1-norm; it is an order of magnitude faster at large ``L``.
    ``"auto"`` picks LU for square systems. Raises
    :class:`RankDeficiencyError` when there are fewer than ``L**2`` samples or
    the condition number exceeds 1e12.
    """
    N = samples.N
    if N < L * L:
        raise RankDeficiencyError(f"{N} samples cannot determine {L * L} coefficients (L={L})")
    if method == "auto":
        method = "lu" if N == L * L else "svd"
    Y = build_sampling_matrix(samples.theta, samples.phi, L)
    if method == "lu":
        if N != L * L:
            raise ValueError("LU inversion needs exactly L**2 samples")
        # singularity is reported through the condition estimate below
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu, piv = scipy.linalg.lu_factor(Y, check_finite=False)
        anorm = np.abs(Y).sum(axis=0).max()
        gecon = scipy.linalg.get_lapack_funcs("gecon", (lu,))
        rc, info = gecon(lu, anorm, norm="1")
        cond = 1.0 / rc if rc > 0 else np.inf
        if info != 0 or cond > MAX_CONDITION:
            raise RankDeficiencyError(f"sampling matrix is rank deficient (L={L}, N={N}, condition {cond:.3g})")
        return SpectrumTriangle(scipy.linalg.lu_solve((lu, piv), samples.values, check_finite=False))
    if method != "svd":
        raise ValueError(f"unknown method {method!r}; use 'auto', 'svd' or 'lu'")
    U, s, Vh = np.linalg.svd(Y, full_matrices=False)
    cond = s[0] / s[-1] if s[-1] > 0 else np.inf
    if cond > MAX_CONDITION:
        raise RankDeficiencyError(f"sampling matrix is rank deficient (L={L}, N={N}, condition {cond:.3g})")
    keep = s > rcond * s[0]
    coeffs = Vh[keep].conj().T @ ((U[:, keep].conj().T @ samples.values) / s[keep])
    return SpectrumTriangle(coeffs)


def synthesize_samples(fhat: SpectrumTriangle, theta, phi) -> SampleSet:
    """Evaluate the finite expansion ``sum f_l^m Y_l^m`` at the given points."""
    Y = build_sampling_matrix(theta, phi, fhat.L)
    return SampleSet(theta, phi, Y @ fhat.coeffs)


# ---------------------------------------------------------------------------
# Equiangular grid
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DHGrid:
    """Nodes ``theta_p = p pi/(2B)``, ``phi_q = q pi/B`` for ``0 <= p, q < 2B`` and weights ``a_p``."""

    band: int
    theta: np.ndarray
    phi: np.ndarray
    weights: np.ndarray

    @property
    def shape(self):
        return (2 * self.band, 2 * self.band)

    def mesh(self):
        """Row-major (p outer, q inner) flattened node coordinates."""
        th, ph = np.meshgrid(self.theta, self.phi, indexing="ij")
        return th.ravel(), ph.ravel()


def _colatitude_weights(band: int) -> np.ndarray:
    # exact for polynomials in cos(theta) of degree < 2*band
    n = 2 * band
    theta = np.pi * np.arange(n) / n
    x = np.cos(theta)
    P = np.empty((n, n))
    P[0] = 1.0
    if n > 1:
        P[1] = x
    for l in range(2, n):
        P[l] = ((2 * l - 1) * x * P[l - 1] - (l - 1) * P[l - 2]) / l
    rhs = np.zeros(n)
    rhs[0] = 2.0 * np.pi / band
    return np.linalg.solve(P, rhs)


@lru_cache(maxsize=64)
def dh_grid(band: int) -> DHGrid:
    """Equiangular grid of bandwidth ``band`` (cached)."""
    if band < 1:
        raise ValueError("band must be positive")
    n = 2 * band
    theta = np.pi * np.arange(n) / n
    phi = np.pi * np.arange(n) / band
    weights = _colatitude_weights(band)
    for a in (theta, phi, weights):
        a.setflags(write=False)
    return DHGrid(band, theta, phi, weights)


def dh_synthesize(fhat: SpectrumTriangle, band: int) -> np.ndarray:
    """Values of a band-limited expansion at all grid nodes, shape ``(2B, 2B)``."""
    if fhat.L > band:
        raise ValueError(f"spectrum band {fhat.L} exceeds grid band {band}")
    grid = dh_grid(band)
    th, ph = grid.mesh()
    return (build_sampling_matrix(th, ph, fhat.L) @ fhat.coeffs).reshape(grid.shape)


def dh_spectrum(values, L: int, band: int | None = None) -> SpectrumTriangle:
    """Quadrature spectrum ``f_l^m = sum_pq a_p f(theta_p, phi_q) conj(Y_l^m)`` for ``l < L``.

    ``values`` holds all ``4 B^2`` node values, either as a ``(2B, 2B)`` array or
    flattened row-major (p outer, q inner). ``band`` defaults to the one implied
    by the value count.
    """
    values = np.asarray(values, dtype=complex)
    count = values.size
    if band is None:
        band = int(round(np.sqrt(count) / 2))
    if count != 4 * band * band:
        raise ValueError(f"expected {4 * band * band} grid values for band {band}, got {count}")
    if L > band:
        raise ValueError(f"cannot resolve band {L} on a grid of band {band}")
    grid = dh_grid(band)
    values = values.reshape(grid.shape)
    # azimuthal DFT, then weighted colatitude sums of normalized Legendre values
    n = 2 * band
    spectrum_q = np.fft.fft(values, axis=1)  # sum_q f e^{-i m phi_q}, m at index m mod n
    pbar = normalized_legendre(L, np.cos(grid.theta), np.sin(grid.theta))
    out = np.zeros(L * L, dtype=complex)
    for l in range(L):
        for m in range(-l, l + 1):
            am = abs(m)
            sign = -1.0 if (m > 0 and m % 2) else 1.0
            out[l * l + l + m] = sign * np.sum(grid.weights * pbar[l, am] * spectrum_q[:, m % n])
    return SpectrumTriangle(out)

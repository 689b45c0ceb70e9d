"""Narrowband sound source localization with a rigid spherical microphone array.

The pressure on a rigid sphere of radius ``r`` due to a point source at
distance ``s`` is a zonal function of the angle between microphone and source.
Sources at a common reference distance therefore produce a sum of rotated
copies of one kernel, and their directions are spike locations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..exceptions import KernelInversionError
from ..fri import recover_diracs
from ..sphere import DiracEnsemble, sph_to_cart
from ..transform import SampleSet, dh_grid

WEAK_KERNEL_REL = 1e-9
TAIL_ENERGY = 1e-3
SERIES_REL_TOL = 1e-12
_RESCALE = 1e250


# ---------------------------------------------------------------------------
# Spherical Bessel functions
# ---------------------------------------------------------------------------

def _j_all(lmax: int, x: float) -> np.ndarray:
    """``j_0..j_lmax`` at scalar ``x`` by downward recurrence (Miller)."""
    out = np.zeros(lmax + 1)
    if x == 0.0:
        out[0] = 1.0
        return out
    start = lmax + 20 + int(x) + int(4 * math.sqrt(max(lmax, x, 1.0)))
    f_next, f = 0.0, 1e-300
    for n in range(start, 0, -1):
        f_prev = (2 * n + 1) / x * f - f_next
        f_next, f = f, f_prev
        if n - 1 <= lmax:
            out[n - 1] = f
        if abs(f) > _RESCALE:
            f_next /= _RESCALE
            f /= _RESCALE
            out[n - 1 :] /= _RESCALE
    j0 = math.sin(x) / x
    if lmax >= 1:
        j1 = math.sin(x) / x**2 - math.cos(x) / x
        if abs(j1) > abs(j0):
            return out * (j1 / out[1])
    return out * (j0 / out[0])


def _y_all(lmax: int, x: float, strict: bool = True) -> np.ndarray:
    """``y_0..y_lmax`` at scalar ``x > 0`` by upward recurrence.

    Overflow raises unless ``strict`` is false, in which case it yields ``-inf``.
    """
    if x <= 0:
        raise ValueError("y_l and h_l need x > 0")
    out = np.empty(lmax + 1)
    out[0] = -math.cos(x) / x
    if lmax >= 1:
        out[1] = -math.cos(x) / x**2 - math.sin(x) / x
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(1, lmax):
            out[n + 1] = (2 * n + 1) / x * out[n] - out[n - 1]
            if not np.isfinite(out[n + 1]):
                if strict:
                    raise OverflowError(f"y_l overflows beyond l={n} at x={x}")
                out[n + 1 :] = -np.inf
                break
    return out


def spherical_bessel_all(kind: str, lmax: int, x: float, derivative: bool = False, strict: bool = True) -> np.ndarray:
    """Orders ``0..lmax`` of ``j``, ``y`` or ``h1 = j + i y`` at scalar ``x``.

    With ``derivative=True`` returns ``f'_l = f_{l-1} - (l+1)/x f_l`` with
    ``f'_0 = -f_1``. ``strict=False`` lets ``y`` and ``h1`` overflow to infinity
    instead of raising.
    """
    if lmax < 0:
        raise ValueError("lmax must be non-negative")
    x = float(x)
    n = lmax + 1 if derivative else lmax
    if kind == "j":
        if x < 0:
            raise ValueError("x must be non-negative")
        f = _j_all(n, x)
    elif kind == "y":
        f = _y_all(n, x, strict)
    elif kind == "h1":
        f = _j_all(n, x) + 1j * _y_all(n, x, strict)
    else:
        raise ValueError(f"unknown kind {kind!r}; use 'j', 'y' or 'h1'")
    if not derivative:
        return f
    if x == 0.0:
        d = np.zeros(lmax + 1)
        if lmax >= 1:
            d[1] = 1.0 / 3.0
        return d
    l = np.arange(lmax + 1)
    d = np.empty(lmax + 1, dtype=f.dtype)
    d[0] = -f[1]
    with np.errstate(invalid="ignore"):
        d[1:] = f[:lmax] - (l[1:] + 1) / x * f[1 : lmax + 1]
    return d


def spherical_bessel(kind: str, l: int, x, derivative: bool = False):
    """Single-order spherical Bessel value (or derivative), vectorized over ``x``."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    vals = np.array([spherical_bessel_all(kind, l, xi, derivative)[l] for xi in xs.ravel()])
    vals = vals.reshape(xs.shape)
    return vals[0] if np.ndim(x) == 0 else vals


def mode_strengths(lmax: int, kr: float, strict: bool = True) -> np.ndarray:
    """``b_l(kr) = j_l - j'_l h_l / h'_l`` for ``l = 0..lmax`` (rigid sphere).

    Orders where ``h_l`` overflows get ``b_l = 0`` when ``strict`` is false.
    """
    if kr <= 0:
        raise ValueError("kr must be positive")
    j = spherical_bessel_all("j", lmax, kr)
    dj = spherical_bessel_all("j", lmax, kr, derivative=True)
    h = spherical_bessel_all("h1", lmax, kr, strict=strict)
    dh = spherical_bessel_all("h1", lmax, kr, derivative=True, strict=strict)
    if np.any(dh == 0):
        raise ZeroDivisionError("h1' vanished, which cannot happen for real positive argument")
    finite = np.isfinite(h) & np.isfinite(dh)
    out = np.zeros(lmax + 1, dtype=complex)
    out[finite] = j[finite] - dj[finite] / dh[finite] * h[finite]
    return out


def mode_strength(l: int, kr: float) -> complex:
    return complex(mode_strengths(l, kr)[l])


# ---------------------------------------------------------------------------
# Green's function and kernel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SSLConfig:
    """Array radius ``r`` and reference source distance ``d_ref`` in meters, frequency ``nu`` in Hz.

    ``L=None`` selects the effective bandwidth of the reference kernel.
    """

    nu: float
    r: float
    d_ref: float
    L: int | None = None
    K: int = 1
    c: float = 343.0

    def __post_init__(self):
        for name in ("nu", "r", "d_ref", "c"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.d_ref <= self.r:
            raise ValueError("the reference distance must exceed the array radius")
        if self.K < 1:
            raise ValueError("K must be positive")
        if self.L is not None and self.L < 2:
            raise ValueError("L must be at least 2")

    @property
    def kappa(self) -> float:
        return 2 * math.pi * self.nu / self.c

    def series_cap(self, distance: float) -> int:
        return 2 * math.ceil(self.kappa * distance) + 40

    @property
    def bandwidth(self) -> int:
        return self.L if self.L is not None else effective_bandwidth(self)


def _series_coefficients(cfg: SSLConfig, distance: float, lmax: int) -> np.ndarray:
    # (i kappa / 4 pi) b_l(kappa r) h_l(kappa s) (2l + 1); overflowing orders are negligible
    b = mode_strengths(lmax, cfg.kappa * cfg.r, strict=False)
    h = spherical_bessel_all("h1", lmax, cfg.kappa * distance, strict=False)
    l = np.arange(lmax + 1)
    with np.errstate(invalid="ignore"):
        out = 1j * cfg.kappa / (4 * math.pi) * b * h * (2 * l + 1)
    return np.where(np.isfinite(out), out, 0.0)


def series_degree(cfg: SSLConfig, distance: float) -> int:
    """Last degree kept in the Green's series for a source at ``distance``.

    The series stops once ``|b_l h_l| (2l+1)`` falls below ``1e-12`` times the
    running sum of such bounds, past the oscillatory range ``l > kappa r``,
    and never beyond ``2 ceil(kappa s) + 40``.
    """
    cap = cfg.series_cap(distance)
    lmax = min(cap, math.ceil(cfg.kappa * cfg.r) + 20)
    while True:
        bound = np.abs(_series_coefficients(cfg, distance, lmax))
        partial = np.cumsum(bound)
        for l in range(1, lmax + 1):
            if l > cfg.kappa * cfg.r and bound[l] < SERIES_REL_TOL * partial[l - 1]:
                return l
        if lmax >= cap:
            return cap
        lmax = min(cap, 2 * lmax)


def _legendre_series(coeffs, x):
    # sum_l coeffs[l] P_l(x)
    x = np.asarray(x, dtype=float)
    p_prev = np.ones_like(x)
    total = coeffs[0] * p_prev
    if len(coeffs) == 1:
        return total
    p = x.copy()
    total = total + coeffs[1] * p
    for l in range(1, len(coeffs) - 1):
        p_prev, p = p, ((2 * l + 1) * x * p - l * p_prev) / (l + 1)
        total = total + coeffs[l + 1] * p
    return total


def green_function(mic_theta, mic_phi, source, cfg: SSLConfig, lmax: int | None = None):
    """Pressure at microphones on the rigid sphere due to a unit point source at Cartesian ``source``."""
    source = np.asarray(source, dtype=float)
    s = float(np.linalg.norm(source))
    if s <= cfg.r:
        raise ValueError(f"source at distance {s} lies inside the array sphere of radius {cfg.r}")
    if lmax is None:
        lmax = series_degree(cfg, s)
    coeffs = _series_coefficients(cfg, s, lmax)
    mics = sph_to_cart(np.asarray(mic_theta, float), np.asarray(mic_phi, float))
    cos_angle = np.clip(mics @ (source / s), -1.0, 1.0)
    return _legendre_series(coeffs, cos_angle)


def ssl_kernel_spectrum(cfg: SSLConfig, L: int | None = None, distance: float | None = None) -> np.ndarray:
    """Zonal coefficients ``h_l^0``, ``l < L``, of the array response to a source on the +z axis.

    Computed by projecting the spatial kernel onto ``Y_l^0`` with the
    equiangular colatitude rule of band ``2L``.
    """
    L = cfg.bandwidth if L is None else L
    distance = cfg.d_ref if distance is None else distance
    grid = dh_grid(2 * L)
    theta = np.asarray(grid.theta)
    values = green_function(theta, np.zeros_like(theta), [0.0, 0.0, distance], cfg)
    x = np.cos(theta)
    out = np.empty(L, dtype=complex)
    p_prev, p = np.ones_like(x), x
    for l in range(L):
        if l == 0:
            pl = p_prev
        elif l == 1:
            pl = p
        else:
            p_prev, p = p, ((2 * l - 1) * x * p - (l - 1) * p_prev) / l
            pl = p
        y_l0 = math.sqrt((2 * l + 1) / (4 * math.pi)) * pl
        # full azimuthal sum of a zonal function is 2B copies of one column
        out[l] = 2 * grid.band * np.sum(grid.weights * values * y_l0)
    return out


def weak_degrees(h, rel: float = WEAK_KERNEL_REL) -> np.ndarray:
    """Degrees whose kernel coefficient is below ``rel`` times the largest."""
    mag = np.abs(np.asarray(h))
    return np.flatnonzero(mag < rel * mag.max())


def kernel_tail_energy(h) -> np.ndarray:
    """``tail[L] = sum_{l >= L} |h_l|^2 / sum_l |h_l|^2`` for every ``L``."""
    e = np.abs(np.asarray(h)) ** 2
    tail = np.cumsum(e[::-1])[::-1]
    return tail / tail[0]


def effective_bandwidth(cfg: SSLConfig, tol: float = TAIL_ENERGY) -> int:
    """Smallest ``L >= 2`` whose reference-kernel tail energy beyond ``L`` is below ``tol``."""
    top = series_degree(cfg, cfg.d_ref) + 1
    tail = kernel_tail_energy(ssl_kernel_spectrum(cfg, L=top))
    for L in range(2, top):
        if tail[L] < tol:
            return L
    return top


# ---------------------------------------------------------------------------
# Simulation and localization
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SoundSource:
    """Complex strength, direction and distance (meters) of a point source."""

    alpha: complex
    theta: float
    phi: float
    distance: float

    def position(self) -> np.ndarray:
        return self.distance * sph_to_cart(self.theta, self.phi)


def simulate_array(sources, mic_theta, mic_phi, cfg: SSLConfig, bandlimit: int | None = None) -> SampleSet:
    """Noiseless microphone pressures for a list of :class:`SoundSource`.

    With ``bandlimit`` the Green's series keeps only degrees below it, which
    is the band-limited model the localizer inverts.
    """
    mic_theta = np.asarray(mic_theta, float)
    mic_phi = np.asarray(mic_phi, float)
    lmax = None if bandlimit is None else bandlimit - 1
    total = np.zeros(mic_theta.shape, dtype=complex)
    for src in sources:
        total += src.alpha * green_function(mic_theta, mic_phi, src.position(), cfg, lmax=lmax)
    return SampleSet(mic_theta, mic_phi, total)


def localize_sound_sources(samples: SampleSet, cfg: SSLConfig, rng: np.random.Generator, **kwargs) -> DiracEnsemble:
    """Directions and effective amplitudes of ``cfg.K`` sources.

    The reference-distance kernel is divided out of the array spectrum and the
    result handed to :func:`recover_diracs`. Amplitudes absorb any
    distance-dependent complex scaling and are not absolute source strengths.
    """
    L = cfg.bandwidth
    h = ssl_kernel_spectrum(cfg, L)
    weak = weak_degrees(h)
    if weak.size:
        raise KernelInversionError(f"array kernel is negligible at degrees {weak.tolist()}", weak)
    return recover_diracs(samples, L, cfg.K, rng, kernel=h, **kwargs)


@dataclass(frozen=True)
class DistanceSensitivity:
    """Ratios ``|g_d / g_dmax|`` in space (rows: distances, cols: ``theta``) and per degree."""

    distances: np.ndarray
    theta: np.ndarray
    spatial: np.ndarray
    degrees: np.ndarray
    spectral: np.ndarray


def kernel_distance_sensitivity(cfg: SSLConfig, distances, n_theta: int = 181, L: int | None = None) -> DistanceSensitivity:
    """How the array kernel changes with source distance, relative to the farthest one."""
    distances = np.asarray(distances, dtype=float)
    if distances.size == 0 or np.any(distances <= cfg.r):
        raise ValueError("distances must be non-empty and exceed the array radius")
    L = cfg.bandwidth if L is None else L
    theta = np.linspace(0.0, np.pi, n_theta)
    phi = np.zeros_like(theta)
    far = distances.max()
    g_far = green_function(theta, phi, [0, 0, far], cfg)
    h_far = ssl_kernel_spectrum(cfg, L, far)
    spatial = np.array([np.abs(green_function(theta, phi, [0, 0, d], cfg) / g_far) for d in distances])
    spectral = np.array([np.abs(ssl_kernel_spectrum(cfg, L, d) / h_far) for d in distances])
    return DistanceSensitivity(distances, theta, spatial, np.arange(L), spectral)

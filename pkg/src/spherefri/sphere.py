"""Geometry and harmonic analysis on the unit sphere.

Conventions used throughout the package:

* points are ``(theta, phi)`` with colatitude ``theta`` in ``[0, pi]`` measured
  from +z and azimuth ``phi`` in ``[0, 2 pi)`` measured from +x;
* associated Legendre functions carry the Condon-Shortley factor ``(-1)^m``;
* ``Y_l^m = N_l^m P_l^{|m|}(cos theta) exp(i m phi)`` with
  ``N_l^m = (-1)^{(m + |m|)/2} sqrt((2l+1)/(4 pi) (l-|m|)!/(l+|m|)!)``.
  The two signs cancel for ``m >= 0``, so ``Y_l^{-m} = (-1)^m conj(Y_l^m)``;
* spectra on the index triangle ``0 <= |m| <= l < L`` are flattened with
  ``(l, m) -> l**2 + l + m``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

from .exceptions import KernelInversionError, SphereFRIError

TWO_PI = 2.0 * np.pi
ANGLE_TOL = 1e-9


def wrap_azimuth(phi):
    """Map azimuths to ``[0, 2 pi)``."""
    out = np.mod(np.asarray(phi, dtype=float), TWO_PI)
    # np.mod(-1e-17, 2pi) rounds to exactly 2pi
    return np.where(out >= TWO_PI, 0.0, out)


def clamp_colatitude(theta, tol=ANGLE_TOL):
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < -tol) or np.any(theta > np.pi + tol):
        raise SphereFRIError(f"colatitude outside [0, pi]: {theta}")
    return np.clip(theta, 0.0, np.pi)


def sph_to_cart(theta, phi):
    """Unit vectors for colatitude/azimuth pairs, stacked on the last axis."""
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=-1)


def cart_to_sph(xyz):
    """Inverse of :func:`sph_to_cart`; input vectors need not be normalized."""
    xyz = np.asarray(xyz, dtype=float)
    r = np.linalg.norm(xyz, axis=-1)
    if np.any(r == 0):
        raise SphereFRIError("zero vector has no direction")
    theta = np.arctan2(np.hypot(xyz[..., 0], xyz[..., 1]), xyz[..., 2])
    phi = wrap_azimuth(np.arctan2(xyz[..., 1], xyz[..., 0]))
    return clamp_colatitude(theta), phi


def great_circle_distance(theta1, phi1, theta2, phi2):
    """Angular distance in radians, accurate for both small and large angles."""
    a = sph_to_cart(theta1, phi1)
    b = sph_to_cart(theta2, phi2)
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.sum(a * b, axis=-1)
    return np.arctan2(cross, dot)


@dataclass(frozen=True)
class SphericalPoint:
    theta: float
    phi: float

    def __post_init__(self):
        object.__setattr__(self, "theta", float(clamp_colatitude(self.theta)))
        object.__setattr__(self, "phi", float(wrap_azimuth(self.phi)))

    @classmethod
    def from_cartesian(cls, xyz) -> "SphericalPoint":
        theta, phi = cart_to_sph(xyz)
        return cls(float(theta), float(phi))

    def to_cartesian(self) -> np.ndarray:
        return sph_to_cart(self.theta, self.phi)


# ---------------------------------------------------------------------------
# Legendre functions and spherical harmonics
# ---------------------------------------------------------------------------

def assoc_legendre(l: int, m: int, x):
    """Associated Legendre function ``P_l^m(x)`` with the Condon-Shortley phase.

    Uses the three-term recurrence in ``l`` started from the closed form
    ``P_m^m = (-1)^m (2m-1)!! (1-x^2)^{m/2}``.
    """
    if m < 0 or m > l:
        raise ValueError(f"need 0 <= m <= l, got l={l}, m={m}")
    x = np.asarray(x, dtype=float)
    if np.any(np.abs(x) > 1.0):
        raise ValueError("|x| must not exceed 1")
    pmm = np.ones_like(x)
    if m > 0:
        s = np.sqrt((1.0 - x) * (1.0 + x))
        fact = 1.0
        for _ in range(m):
            pmm = -pmm * fact * s
            fact += 2.0
    if l == m:
        return pmm
    pmmp1 = x * (2 * m + 1) * pmm
    for ll in range(m + 2, l + 1):
        pmm, pmmp1 = pmmp1, (x * (2 * ll - 1) * pmmp1 - (ll + m - 1) * pmm) / (ll - m)
    return pmmp1


def normalized_legendre(L: int, x, s=None):
    """Orthonormalized ``sqrt((2l+1)/(4pi) (l-m)!/(l+m)!) P_l^m(x)`` for ``0 <= m <= l < L``.

    Returns an array of shape ``(L, L) + x.shape`` indexed ``[l, m]``; entries
    with ``m > l`` are zero. ``s`` may carry ``sqrt(1 - x^2)`` computed directly
    from ``sin(theta)``, which is more accurate near the poles.
    """
    x = np.asarray(x, dtype=float)
    if s is None:
        s = np.sqrt(np.clip((1.0 - x) * (1.0 + x), 0.0, None))
    out = np.zeros((L, L) + x.shape)
    if L == 0:
        return out
    out[0, 0] = 1.0 / np.sqrt(4.0 * np.pi)
    for m in range(1, L):
        out[m, m] = -np.sqrt((2 * m + 1) / (2.0 * m)) * s * out[m - 1, m - 1]
    for m in range(L - 1):
        out[m + 1, m] = np.sqrt(2 * m + 3.0) * x * out[m, m]
    for l in range(2, L):
        m = np.arange(l - 1)
        a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
        b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
        extra = (slice(None),) + (None,) * x.ndim
        out[l, : l - 1] = a[extra] * (x * out[l - 1, : l - 1] - b[extra] * out[l - 2, : l - 1])
    return out


def triangle_index(l, m):
    return l * l + l + m


@lru_cache(maxsize=None)
def _triangle_lm(L: int):
    l = np.repeat(np.arange(L), 2 * np.arange(L) + 1)
    m = np.concatenate([np.arange(-k, k + 1) for k in range(L)]) if L else np.zeros(0, int)
    l.setflags(write=False)
    m.setflags(write=False)
    return l, m


def triangle_lm(L: int):
    """Degree and order arrays of length ``L**2`` in flattened spectrum order."""
    return _triangle_lm(int(L))


def harmonic_matrix(L: int, theta, phi) -> np.ndarray:
    """``Y[n, idx(l, m)] = Y_l^m(theta_n, phi_n)`` for all ``(l, m)`` with ``l < L``.

    Any real ``theta`` is accepted: outside ``[0, pi]`` the result is the
    harmonic at the geometrically equivalent point, so the map stays smooth
    for optimizers that wander past a pole.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    theta, phi = np.broadcast_arrays(theta, phi)
    pbar = normalized_legendre(L, np.cos(theta), np.sin(theta))
    l, m = triangle_lm(L)
    am = np.abs(m)
    sign = np.where((m > 0) & (m % 2 == 1), -1.0, 1.0)
    vals = sign[:, None] * pbar[l, am] * np.exp(1j * m[:, None] * phi[None, :])
    return vals.T


def harmonic_gradients(L: int, theta, phi):
    """Harmonic matrix and its derivatives in ``theta`` and ``phi``.

    Uses ``dY_l^m/dtheta = (c_- e^{i phi} Y_l^{m-1} - c_+ e^{-i phi} Y_l^{m+1}) / 2``
    with ``c_+- = sqrt((l -+ m)(l +- m + 1))``, which stays finite at the poles.
    The signs follow this module's convention, where ``Y_l^m`` lacks the usual
    ``(-1)^m`` for ``m > 0``.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    phi = np.atleast_1d(np.asarray(phi, dtype=float))
    theta, phi = np.broadcast_arrays(theta, phi)
    Y = harmonic_matrix(L, theta, phi)
    l, m = triangle_lm(L)
    c_up = np.sqrt(np.clip((l - m) * (l + m + 1), 0, None))
    c_dn = np.sqrt(np.clip((l + m) * (l - m + 1), 0, None))
    up = np.where(m < l, np.arange(l.size) + 1, 0)
    dn = np.where(m > -l, np.arange(l.size) - 1, 0)
    e = np.exp(1j * phi)[:, None]
    dtheta = 0.5 * (c_dn * e * Y[:, dn] - c_up * np.conj(e) * Y[:, up])
    dphi = 1j * m * Y
    return Y, dtheta, dphi


def sph_harmonic(l: int, m: int, theta, phi):
    """Spherical harmonic ``Y_l^m`` evaluated at ``(theta, phi)``."""
    if abs(m) > l or l < 0:
        raise ValueError(f"need |m| <= l, got l={l}, m={m}")
    scalar = np.ndim(theta) == 0 and np.ndim(phi) == 0
    theta_b, phi_b = np.broadcast_arrays(np.asarray(theta, float), np.asarray(phi, float))
    cols = harmonic_matrix(l + 1, theta_b.ravel(), phi_b.ravel())
    val = cols[:, triangle_index(l, m)].reshape(theta_b.shape)
    return complex(val) if scalar else val


def normalization(l: int, m: int) -> float:
    """``N_l^m`` including its sign."""
    am = abs(m)
    mag = math.sqrt((2 * l + 1) / (4 * math.pi) * math.exp(math.lgamma(l - am + 1) - math.lgamma(l + am + 1)))
    return -mag if (m > 0 and m % 2 == 1) else mag


# ---------------------------------------------------------------------------
# Polynomial form of the harmonics in x = cos(theta)
# ---------------------------------------------------------------------------

def _legendre_int_coeffs(l: int):
    """Exact coefficients of ``P_l`` in ascending powers as Fractions."""
    c = [Fraction(0)] * (l + 1)
    for k in range(l // 2 + 1):
        num = (-1) ** k * math.factorial(2 * l - 2 * k)
        den = 2 ** l * math.factorial(k) * math.factorial(l - k) * math.factorial(l - 2 * k)
        c[l - 2 * k] = Fraction(num, den)
    return c


def _derivative(coeffs, order: int):
    out = list(coeffs)
    for _ in range(order):
        out = [out[k] * k for k in range(1, len(out))] or [Fraction(0)]
    return out


def _invert_lower_triangular(rows):
    n = len(rows)
    inv = [[Fraction(0)] * n for _ in range(n)]
    for j in range(n):
        inv[j][j] = 1 / rows[j][j]
        for i in range(j + 1, n):
            acc = sum((rows[i][k] * inv[k][j] for k in range(j, i)), Fraction(0))
            inv[i][j] = -acc / rows[i][i]
    return inv


@dataclass(frozen=True)
class PolyCoeffTable:
    """Coefficient vectors ``c_lm`` with ``Y_l^m = (c_lm . [x^{L-1}, ..., 1]) sin^{|m|} e^{i m phi}``.

    ``coeffs[idx(l, m), j]`` multiplies ``x^(L-1-j)``. ``inverse[m]`` is the
    exact inverse of the per-order block, mapping the spectrum column
    ``[f_l^m for l = |m|..L-1]`` to data-matrix entries for ascending powers
    ``0..L-1-|m|``.
    """

    L: int
    coeffs: np.ndarray
    inverse: dict = field(repr=False)

    def row(self, l: int, m: int) -> np.ndarray:
        return self.coeffs[triangle_index(l, m)]

    def evaluate(self, l: int, m: int, x):
        x = np.asarray(x, dtype=float)
        powers = x[..., None] ** np.arange(self.L - 1, -1, -1)
        return powers @ self.row(l, m)

    def degree(self, l: int, m: int) -> int:
        nz = np.flatnonzero(self.row(l, m))
        return int(self.L - 1 - nz[0]) if nz.size else -1


@lru_cache(maxsize=32)
def poly_coeffs(L: int) -> PolyCoeffTable:
    """Build the coefficient table for bandwidth ``L`` (cached)."""
    if L < 1:
        raise ValueError("L must be positive")
    legendre = [_legendre_int_coeffs(l) for l in range(L)]
    coeffs = np.zeros((L * L, L))
    inverse = {}
    for m in range(-(L - 1), L):
        am = abs(m)
        n = L - am
        rows = []
        scales = []
        for l in range(am, L):
            d = _derivative(legendre[l], am)
            d = d + [Fraction(0)] * (n - len(d))
            rows.append(d[:n])
            # tilde N = (-1)^m N_l^m
            scale = normalization(l, m) * (-1.0 if am % 2 else 1.0)
            scales.append(scale)
            coeffs[triangle_index(l, m), L - 1 - np.arange(n)] = [scale * float(v) for v in d[:n]]
        inv = _invert_lower_triangular(rows)
        block = np.array([[float(v) for v in r] for r in inv])
        block = block / np.asarray(scales)[None, :]
        block.setflags(write=False)
        inverse[m] = block
    coeffs.setflags(write=False)
    return PolyCoeffTable(L=L, coeffs=coeffs, inverse=inverse)


# ---------------------------------------------------------------------------
# Rotations
# ---------------------------------------------------------------------------

def rotation_z(alpha: float) -> np.ndarray:
    c, s = math.cos(alpha), math.sin(alpha)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_y(beta: float) -> np.ndarray:
    c, s = math.cos(beta), math.sin(beta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True, eq=False)
class EulerRotation:
    """Proper rotation of R^3, stored as its matrix; ZYZ Euler angles on demand."""

    matrix: np.ndarray

    def __post_init__(self):
        mat = np.array(self.matrix, dtype=float)
        if mat.shape != (3, 3):
            raise ValueError("rotation matrix must be 3x3")
        if not np.allclose(mat @ mat.T, np.eye(3), atol=1e-10) or np.linalg.det(mat) < 0:
            raise ValueError("matrix is not a proper rotation")
        mat.setflags(write=False)
        object.__setattr__(self, "matrix", mat)

    @classmethod
    def identity(cls) -> "EulerRotation":
        return cls(np.eye(3))

    @classmethod
    def from_euler(cls, alpha: float, beta: float, gamma: float) -> "EulerRotation":
        return cls(rotation_z(alpha) @ rotation_y(beta) @ rotation_z(gamma))

    @property
    def euler(self):
        R = self.matrix
        beta = math.acos(min(1.0, max(-1.0, R[2, 2])))
        if math.sin(beta) > 1e-12:
            alpha = math.atan2(R[1, 2], R[0, 2])
            gamma = math.atan2(R[2, 1], -R[2, 0])
        elif R[2, 2] > 0:
            alpha, gamma = math.atan2(R[1, 0], R[0, 0]), 0.0
        else:
            alpha, gamma = math.atan2(-R[1, 0], R[1, 1]), 0.0
        return alpha, beta, gamma

    def compose(self, other: "EulerRotation") -> "EulerRotation":
        """Rotation applying ``other`` first, then ``self``."""
        return EulerRotation(self.matrix @ other.matrix)

    def inverse(self) -> "EulerRotation":
        return EulerRotation(self.matrix.T)

    def apply(self, xyz):
        return np.asarray(xyz, dtype=float) @ self.matrix.T

    def rotate(self, theta, phi):
        """Rotate arrays of points given in angles."""
        return cart_to_sph(self.apply(sph_to_cart(theta, phi)))


def rotate_point(r: EulerRotation, p: SphericalPoint) -> SphericalPoint:
    return SphericalPoint.from_cartesian(r.apply(p.to_cartesian()))


def random_rotation(rng: np.random.Generator) -> EulerRotation:
    """Haar-distributed rotation from a uniformly random unit quaternion."""
    q = rng.standard_normal(4)
    w, x, y, z = q / np.linalg.norm(q)
    mat = np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
        [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
        [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
    ])
    return EulerRotation(mat)


# ---------------------------------------------------------------------------
# Spectra
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SpectrumTriangle:
    """Spherical-harmonic coefficients for ``l < L`` in flattened order."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex).ravel()
        L = math.isqrt(c.size)
        if L * L != c.size or L == 0:
            raise ValueError(f"spectrum length {c.size} is not a positive square")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def L(self) -> int:
        return math.isqrt(self.coeffs.size)

    def __getitem__(self, lm):
        l, m = lm
        if not (0 <= l < self.L and abs(m) <= l):
            raise IndexError(f"(l, m) = {lm} outside the band L={self.L}")
        return self.coeffs[triangle_index(l, m)]

    def order_column(self, m: int) -> np.ndarray:
        """Coefficients ``f_l^m`` for ``l = |m| .. L-1``."""
        l = np.arange(abs(m), self.L)
        return self.coeffs[l * l + l + m]

    def truncate(self, L: int) -> "SpectrumTriangle":
        if L > self.L:
            raise ValueError(f"cannot truncate band {self.L} to {L}")
        return SpectrumTriangle(self.coeffs[: L * L])

    def norm(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    def __add__(self, other):
        return SpectrumTriangle(self.coeffs + other.coeffs)

    def __sub__(self, other):
        return SpectrumTriangle(self.coeffs - other.coeffs)

    @classmethod
    def zeros(cls, L: int) -> "SpectrumTriangle":
        return cls(np.zeros(L * L, dtype=complex))


@dataclass(frozen=True, eq=False)
class DiracEnsemble:
    """``K`` weighted spikes: complex amplitudes and locations on the sphere."""

    alpha: np.ndarray
    theta: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=complex).ravel()
        theta = np.array(clamp_colatitude(np.ravel(self.theta)), dtype=float)
        phi = np.array(wrap_azimuth(np.ravel(self.phi)), dtype=float)
        if not (alpha.size == theta.size == phi.size):
            raise ValueError("alpha, theta and phi must have equal length")
        if alpha.size < 1:
            raise ValueError("an ensemble needs at least one spike")
        xyz = sph_to_cart(theta, phi)
        if alpha.size > 1:
            d = np.linalg.norm(xyz[:, None, :] - xyz[None, :, :], axis=-1)
            d[np.diag_indices(alpha.size)] = np.inf
            if d.min() == 0.0:
                raise ValueError("spike locations must be pairwise distinct")
        for a in (alpha, theta, phi):
            a.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "phi", phi)

    @property
    def K(self) -> int:
        return self.alpha.size

    def cartesian(self) -> np.ndarray:
        return sph_to_cart(self.theta, self.phi)

    def points(self):
        return [SphericalPoint(t, p) for t, p in zip(self.theta, self.phi)]

    def rotated(self, r: EulerRotation) -> "DiracEnsemble":
        theta, phi = r.rotate(self.theta, self.phi)
        return DiracEnsemble(self.alpha, theta, phi)

    def union(self, other: "DiracEnsemble") -> "DiracEnsemble":
        return DiracEnsemble(
            np.concatenate([self.alpha, other.alpha]),
            np.concatenate([self.theta, other.theta]),
            np.concatenate([self.phi, other.phi]),
        )

    @classmethod
    def random(cls, K: int, rng: np.random.Generator, amplitudes: str = "complex") -> "DiracEnsemble":
        """Uniform random locations; amplitudes ``complex`` (unit-modulus phase times
        magnitude in [0.5, 1.5]), ``real`` (magnitude with random sign) or ``positive``."""
        z = rng.uniform(-1.0, 1.0, K)
        phi = rng.uniform(0.0, TWO_PI, K)
        mag = rng.uniform(0.5, 1.5, K)
        if amplitudes == "complex":
            alpha = mag * np.exp(1j * rng.uniform(0.0, TWO_PI, K))
        elif amplitudes == "real":
            alpha = mag * rng.choice([-1.0, 1.0], K)
        elif amplitudes == "positive":
            alpha = mag
        else:
            raise ValueError(f"unknown amplitude model {amplitudes!r}")
        return cls(alpha, np.arccos(z), phi)


def dirac_spectrum(f: DiracEnsemble, L: int) -> SpectrumTriangle:
    """Lowpass spectrum ``f_l^m = sum_k alpha_k conj(Y_l^m(xi_k))`` for ``l < L``."""
    Y = harmonic_matrix(L, f.theta, f.phi)
    return SpectrumTriangle(np.conj(Y).T @ f.alpha)


def _zonal_factor(L: int, hhat_zonal) -> np.ndarray:
    h = np.asarray(hhat_zonal, dtype=complex).ravel()
    if h.size < L:
        raise ValueError(f"kernel spectrum has {h.size} degrees, spectrum needs {L}")
    return h[:L]


def convolve_spectra(fhat: SpectrumTriangle, hhat_zonal) -> SpectrumTriangle:
    """Spectrum of ``f * h`` for a zonal kernel given by its ``m = 0`` coefficients."""
    L = fhat.L
    h = _zonal_factor(L, hhat_zonal)
    l, _ = triangle_lm(L)
    return SpectrumTriangle(np.sqrt(4 * np.pi / (2 * l + 1)) * fhat.coeffs * h[l])


def deconvolve_spectra(yhat: SpectrumTriangle, hhat_zonal, threshold: float = 1e-12) -> SpectrumTriangle:
    """Undo :func:`convolve_spectra`.

    Raises :class:`KernelInversionError` naming the degrees where the kernel
    magnitude is below ``threshold``.
    """
    L = yhat.L
    h = _zonal_factor(L, hhat_zonal)
    bad = np.flatnonzero(np.abs(h) < threshold)
    if bad.size:
        raise KernelInversionError(
            f"kernel coefficient below {threshold:g} at degrees {bad.tolist()}", degrees=bad.tolist()
        )
    l, _ = triangle_lm(L)
    return SpectrumTriangle(np.sqrt((2 * l + 1) / (4 * np.pi)) * yhat.coeffs / h[l])

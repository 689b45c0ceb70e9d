"""Spike recovery on the sphere by generalized annihilating filtering.

The lowpass spectrum of ``K`` spikes is mapped one-to-one onto a triangular
part of the data matrix ``D[p, m] = sum_k alpha_k x_k^p sin(theta_k)^|m| e^{-i m phi_k}``
with ``x_k = cos(theta_k)``. Every known column is a sum of ``K`` exponentials
in ``p`` and is annihilated by the filter whose roots are the ``x_k``. Windows
from all long-enough columns are stacked into a block-Hankel matrix whose
null vector is that filter.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares, minimize

from .exceptions import (
    BandwidthError,
    DegenerateConfigurationError,
    SphereFRIError,
    UnreliableRecoveryError,
)
from .sphere import (
    DiracEnsemble,
    SpectrumTriangle,
    _zonal_factor,
    deconvolve_spectra,
    dirac_spectrum,
    harmonic_gradients,
    harmonic_matrix,
    poly_coeffs,
    random_rotation,
    sph_to_cart,
    cart_to_sph,
    triangle_index,
    triangle_lm,
    wrap_azimuth,
)
from .transform import SampleSet, spectrum_from_samples

log = logging.getLogger(__name__)

ROOT_IMAG_TOL = 1e-6
# roots only seed a refinement, which removes their perturbation
REFINED_IMAG_TOL = 1e-3
RANK_TOL = 1e-8
POLE_TOL = 1e-9
COLATITUDE_GAP = 1e-9


def max_recoverable_diracs(L: int) -> int:
    """Largest ``K`` with ``L >= K + sqrt(K)``, i.e. ``floor(L - sqrt(L + 1/4) + 1/2)``."""
    if L < 1:
        raise ValueError("L must be positive")
    K = max(0, int(math.floor(L - math.sqrt(L + 0.25) + 0.5)))
    # guard the floor against rounding at exact squares
    while K + 1 <= L and (L - K - 1) ** 2 >= K + 1:
        K += 1
    while K > 0 and (L - K) ** 2 < K:
        K -= 1
    return K


def min_bandwidth(K: int) -> int:
    """Smallest ``L`` with ``(L - K)^2 >= K``, i.e. ``ceil(K + sqrt(K))``."""
    if K < 1:
        raise ValueError("K must be positive")
    return K + math.isqrt(K - 1) + 1


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """``L x (2L-1)`` data matrix.

    Row ``r`` holds power ``p = L-1-r`` (highest power on top), column ``j``
    holds order ``m = j-(L-1)``. Entries outside ``known`` are NaN.
    """

    L: int
    entries: np.ndarray
    known: np.ndarray

    @staticmethod
    def triangle_mask(L: int) -> np.ndarray:
        r = np.arange(L)[:, None]
        m = np.arange(-(L - 1), L)[None, :]
        return r >= np.abs(m)

    def entry(self, p: int, m: int) -> complex:
        r, j = self.L - 1 - p, m + self.L - 1
        if not self.known[r, j]:
            raise IndexError(f"entry (p={p}, m={m}) is not known")
        return self.entries[r, j]

    def column(self, m: int) -> np.ndarray:
        """Known entries of column ``m`` for ascending powers ``0, 1, ...``."""
        j = m + self.L - 1
        rows = np.flatnonzero(self.known[:, j])
        return self.entries[rows[::-1], j]


def data_matrix_from_params(f: DiracEnsemble, L: int) -> DataMatrix:
    """Full data matrix of a spike ensemble, ``D = X A U``."""
    x = np.cos(f.theta)
    s = np.sin(f.theta)
    p = np.arange(L - 1, -1, -1)
    m = np.arange(-(L - 1), L)
    X = x[None, :] ** p[:, None]
    U = s[:, None] ** np.abs(m)[None, :] * np.exp(-1j * np.outer(f.phi, m))
    entries = X @ (f.alpha[:, None] * U)
    return DataMatrix(L, entries, np.ones_like(entries, dtype=bool))


def spectrum_to_data_matrix(fhat: SpectrumTriangle) -> DataMatrix:
    """Triangular part of the data matrix determined by a lowpass spectrum."""
    L = fhat.L
    table = poly_coeffs(L)
    entries = np.full((L, 2 * L - 1), np.nan + 1j * np.nan)
    for m in range(-(L - 1), L):
        col = table.inverse[m] @ fhat.order_column(m)  # ascending powers
        entries[L - 1 - np.arange(col.size), m + L - 1] = col
    return DataMatrix(L, entries, DataMatrix.triangle_mask(L))


def data_matrix_to_spectrum(d: DataMatrix) -> SpectrumTriangle:
    """Apply the masks ``c_lm e_m^T`` to the known triangle."""
    L = d.L
    table = poly_coeffs(L)
    out = np.zeros(L * L, dtype=complex)
    for m in range(-(L - 1), L):
        am = abs(m)
        col = d.entries[am:, m + L - 1]  # rows r >= |m|
        for l in range(am, L):
            out[triangle_index(l, m)] = table.row(l, m)[am:] @ col
    return SpectrumTriangle(out)


def default_orders(L: int, K: int):
    """Orders ``0, -1, 1, -2, 2, ...`` whose known columns hold at least ``K + 1`` entries."""
    orders = [0]
    for a in range(1, L - K):
        orders += [-a, a]
    return orders


def build_annihilating_matrix(d: DataMatrix, K: int, orders=None) -> np.ndarray:
    """Stack all length-``K+1`` descending-power windows of the chosen columns.

    Row ``[d_{n,m}, d_{n-1,m}, ..., d_{n-K,m}]`` for every admissible ``n``.
    With the default orders the row count is ``(L-K)^2``.
    """
    L = d.L
    if K < 1:
        raise ValueError("K must be positive")
    if orders is None:
        if (L - K) < 0 or (L - K) ** 2 < K:
            raise BandwidthError(
                f"bandwidth L={L} cannot resolve K={K} spikes; need L >= {min_bandwidth(K)}"
            )
        orders = default_orders(L, K)
    rows = []
    for m in orders:
        col = d.column(m)[::-1]  # descending powers
        for start in range(col.size - K):
            rows.append(col[start : start + K + 1])
    if len(rows) < K:
        raise BandwidthError(f"only {len(rows)} annihilation rows available, need at least {K}")
    return np.array(rows)


@dataclass(frozen=True, eq=False)
class AnnihilatingFilter:
    """Taps ``h_0..h_K`` of ``H(z) = sum h_n z^-n``, unit Euclidean norm."""

    taps: np.ndarray

    def __post_init__(self):
        h = np.array(self.taps, dtype=complex).ravel()
        nrm = np.linalg.norm(h)
        if h.size < 2 or nrm == 0:
            raise ValueError("a filter needs at least two taps, not all zero")
        h = h / nrm
        h.setflags(write=False)
        object.__setattr__(self, "taps", h)

    @property
    def K(self) -> int:
        return self.taps.size - 1

    @classmethod
    def from_roots(cls, roots) -> "AnnihilatingFilter":
        return cls(np.poly(np.asarray(roots)))

    def roots(self) -> np.ndarray:
        """Roots via eigenvalues of the companion matrix."""
        h = self.taps
        if abs(h[0]) <= 1e-14:
            raise UnreliableRecoveryError("leading filter tap vanishes; a root escaped to infinity")
        K = self.K
        comp = np.zeros((K, K), dtype=complex)
        comp[0, :] = -h[1:] / h[0]
        comp[np.arange(1, K), np.arange(K - 1)] = 1.0
        return np.linalg.eigvals(comp)

    def apply(self, seq) -> np.ndarray:
        """Valid-part convolution ``sum_n h_n y_{t-n}``."""
        return np.convolve(np.asarray(seq), self.taps, mode="valid")


def solve_annihilating_filter(Z: np.ndarray, rank_tol: float = RANK_TOL) -> AnnihilatingFilter:
    """Right singular vector of ``Z`` for its smallest singular value.

    Raises :class:`DegenerateConfigurationError` if ``Z`` has numerical rank
    below ``K`` (relative tolerance ``rank_tol``), e.g. for coincident colatitudes.
    """
    Z = np.asarray(Z)
    K = Z.shape[1] - 1
    if Z.shape[0] < K:
        raise BandwidthError(f"annihilating matrix has {Z.shape[0]} rows, need {K}")
    _, s, Vh = np.linalg.svd(Z)
    if s[0] == 0 or s[K - 1] / s[0] < rank_tol:
        raise DegenerateConfigurationError(
            f"annihilating matrix has rank below K={K} (sigma_K/sigma_1 = {s[K - 1] / max(s[0], 1e-300):.3g})"
        )
    return AnnihilatingFilter(Vh[-1].conj())


def sanitize_roots(roots, imag_tol: float = ROOT_IMAG_TOL) -> np.ndarray:
    """Real parts of nearly-real roots in ``[-1, 1]``; reject anything else."""
    roots = np.asarray(roots, dtype=complex)
    re, im = roots.real, roots.imag
    if np.any(np.abs(im) > imag_tol * (1 + np.abs(re))):
        raise UnreliableRecoveryError(f"filter has non-real roots {roots[np.abs(im) > imag_tol * (1 + np.abs(re))]}")
    if np.any(np.abs(re) > 1 + imag_tol):
        raise UnreliableRecoveryError(f"filter roots outside [-1, 1]: {re[np.abs(re) > 1 + imag_tol]}")
    return np.clip(re, -1.0, 1.0)


def filter_roots_to_colatitudes(h: AnnihilatingFilter, imag_tol: float = ROOT_IMAG_TOL) -> np.ndarray:
    """Sorted colatitudes ``arccos`` of the filter roots."""
    return np.sort(np.arccos(sanitize_roots(h.roots(), imag_tol)))


def column_weights(d: DataMatrix, x, m: int) -> np.ndarray:
    """Least-squares ``v`` with ``d_m[p] = sum_k v_k x_k^p`` over all known powers."""
    col = d.column(m)
    X = np.asarray(x)[None, :] ** np.arange(col.size)[:, None]
    v, *_ = np.linalg.lstsq(X, col, rcond=None)
    return v


def recover_azimuths_amplitudes(d: DataMatrix, colatitudes) -> DiracEnsemble:
    """Amplitudes from column ``m=0`` and azimuths from the phase of ``v_0 / v_1``."""
    theta = np.asarray(colatitudes, dtype=float)
    if np.any(np.sin(theta) < POLE_TOL):
        raise DegenerateConfigurationError("a spike sits on a pole; its azimuth is unrecoverable")
    if d.L < 2:
        raise BandwidthError("azimuths need at least two degrees (L >= 2)")
    x = np.cos(theta)
    v0 = column_weights(d, x, 0)
    v1 = column_weights(d, x, 1)
    # v1 = v0 sin(theta) e^{-i phi}: a root that only nearly reaches +-1 still shows here
    if np.any(np.abs(v1) <= POLE_TOL * np.abs(v0)):
        raise DegenerateConfigurationError("a spike sits on a pole; its azimuth is unrecoverable")
    phi = wrap_azimuth(np.angle(v0 / v1))
    return DiracEnsemble(v0, theta, phi)


def recover_from_spectrum(fhat: SpectrumTriangle, K: int, imag_tol: float = ROOT_IMAG_TOL) -> DiracEnsemble:
    """Data matrix, annihilating filter, roots, then azimuths and amplitudes."""
    d = spectrum_to_data_matrix(fhat)
    Z = build_annihilating_matrix(d, K)
    h = solve_annihilating_filter(Z)
    theta = filter_roots_to_colatitudes(h, imag_tol)
    if K > 1 and np.min(np.diff(theta)) < COLATITUDE_GAP:
        raise DegenerateConfigurationError("recovered colatitudes coincide")
    return recover_azimuths_amplitudes(d, theta)


def annihilation_quality(fhat: SpectrumTriangle, K: int) -> float:
    """``sigma_K / sigma_1`` of the annihilating matrix built from ``fhat``.

    Larger is better; values near zero mean the colatitude roots are poorly
    determined in this frame.
    """
    Z = build_annihilating_matrix(spectrum_to_data_matrix(fhat), K)
    s = np.linalg.svd(Z, compute_uv=False)
    return float(s[K - 1] / s[0]) if s[0] > 0 else 0.0


def recover_diracs(
    samples: SampleSet,
    L: int,
    K: int,
    rng: np.random.Generator,
    kernel=None,
    refine=False,
    imag_tol: float | None = None,
    attempts: int = 2,
    candidates: int = 4,
    select: str = "conditioning",
) -> DiracEnsemble:
    """Full pipeline: random rotation, spectrum, annihilation, inverse rotation.

    The rotation is realized by relabeling the sample points. With ``kernel``
    (zonal ``h_l^0`` coefficients) the spectrum is deconvolved first.

    Each of the ``attempts`` rounds draws ``candidates`` random rotations and
    ranks them by :func:`annihilation_quality`; the best is used and the rest
    are fallbacks when the root stage fails. With ``candidates=1`` this is
    plain retry with a fresh rotation.

    ``select="misfit"`` instead runs (and refines) every candidate of a round
    and keeps the estimate with the smallest spectral misfit, which guards
    against a single bad frame when the data only approximately follow the
    spike model.

    ``refine`` is ``False``, ``True`` (same as ``"nelder-mead"``) or
    ``"gauss-newton"``; see :func:`refine_least_squares`. ``imag_tol``
    defaults to ``ROOT_IMAG_TOL`` without refinement and to the looser
    ``REFINED_IMAG_TOL`` with it.
    """
    if K < 1:
        raise ValueError("K must be positive")
    if K > max_recoverable_diracs(L):
        raise BandwidthError(f"L={L} recovers at most {max_recoverable_diracs(L)} spikes, asked for {K}")
    if attempts < 1 or candidates < 1:
        raise ValueError("attempts and candidates must be positive")
    if select not in ("conditioning", "misfit"):
        raise ValueError(f"unknown selection rule {select!r}")
    method = _refine_method(refine)
    if imag_tol is None:
        imag_tol = ROOT_IMAG_TOL if method is None else REFINED_IMAG_TOL
    weights = None if kernel is None else kernel_weights(L, kernel)
    last = None
    for _ in range(attempts):
        frames = []
        for _ in range(candidates):
            rot = random_rotation(rng)
            theta, phi = rot.rotate(samples.theta, samples.phi)
            fhat = spectrum_from_samples(SampleSet(theta, phi, samples.values), L)
            if kernel is not None:
                fhat = deconvolve_spectra(fhat, kernel)
            frames.append((rot, fhat))
        if candidates > 1 and select == "conditioning":
            frames.sort(key=lambda fr: -annihilation_quality(fr[1], K))
        best = None
        for rot, fhat in frames:
            try:
                est = recover_from_spectrum(fhat, K, imag_tol)
            except (DegenerateConfigurationError, UnreliableRecoveryError) as exc:
                log.debug("rotation rejected, trying the next one: %s", exc)
                last = exc
                continue
            if method is not None:
                est = refine_least_squares(fhat, est, method=method, weights=weights)
            if select == "conditioning":
                return est.rotated(rot.inverse())
            misfit = spectral_misfit(fhat, est, weights)
            if best is None or misfit < best[0]:
                best = (misfit, est.rotated(rot.inverse()))
        if best is not None:
            return best[1]
    raise last


def deconvolve_then_recover(samples: SampleSet, kernel, L: int, K: int, rng: np.random.Generator, **kwargs) -> DiracEnsemble:
    """Recover spikes observed through a zonal kernel."""
    return recover_diracs(samples, L, K, rng, kernel=kernel, **kwargs)


# ---------------------------------------------------------------------------
# Least-squares refinement
# ---------------------------------------------------------------------------

REFINE_METHODS = ("nelder-mead", "gauss-newton")


def _refine_method(refine):
    if refine is False or refine is None:
        return None
    if refine is True:
        return "nelder-mead"
    if refine not in REFINE_METHODS:
        raise ValueError(f"unknown refinement {refine!r}; choose from {REFINE_METHODS}")
    return refine


def spectral_misfit(fhat: SpectrumTriangle, f: DiracEnsemble, weights=None) -> float:
    """Squared distance between ``fhat`` and the lowpass spectrum of ``f``.

    ``weights`` (one non-negative real per coefficient) scales each residual.
    """
    r = fhat.coeffs - dirac_spectrum(f, fhat.L).coeffs
    if weights is not None:
        r = r * weights
    return float(np.sum(np.abs(r) ** 2))


def kernel_weights(L: int, kernel) -> np.ndarray:
    """Per-coefficient gain of a zonal kernel, normalized to a peak of one.

    Deconvolution divides each degree by this gain, so residuals of a
    deconvolved spectrum weighted by it have roughly uniform noise.
    """
    l, _ = triangle_lm(L)
    gain = np.abs(_zonal_factor(L, kernel)) * np.sqrt(4 * np.pi / (2 * np.arange(L) + 1))
    gain = gain / gain.max()
    return gain[l]


def _unpack(params, K):
    alpha = params[:K] + 1j * params[K : 2 * K]
    xyz = sph_to_cart(params[2 * K : 3 * K], params[3 * K :])
    theta, phi = cart_to_sph(xyz)
    return alpha, theta, phi


def _nelder_mead(fhat, init, x0, f0, objective, maxiter, tol):
    K = init.K
    # initial simplex scaled to the misfit so a good start is not thrown away
    scale = np.sqrt(f0) / max(np.linalg.norm(fhat.coeffs), 1e-300)
    step = float(np.clip(scale, 1e-7, 1e-2))
    n = x0.size
    simplex = np.tile(x0, (n + 1, 1))
    amp = max(np.abs(init.alpha).max(), 1e-12)
    steps = np.concatenate([np.full(2 * K, step * amp), np.full(2 * K, step)])
    simplex[1:] += np.diag(steps)
    res = minimize(
        objective,
        x0,
        method="Nelder-Mead",
        options=dict(maxiter=maxiter, xatol=tol, fatol=tol * f0, initial_simplex=simplex, adaptive=n > 8),
    )
    return res.x


def _gauss_newton(fhat, init, x0, maxiter, tol, weights):
    K = init.K
    L = fhat.L
    target = fhat.coeffs

    def residual(params):
        alpha = params[:K] + 1j * params[K : 2 * K]
        Y = harmonic_matrix(L, params[2 * K : 3 * K], params[3 * K :])
        r = (np.conj(Y).T @ alpha - target) * weights
        return np.concatenate([r.real, r.imag])

    def jacobian(params):
        alpha = params[:K] + 1j * params[K : 2 * K]
        Y, dt, dp = harmonic_gradients(L, params[2 * K : 3 * K], params[3 * K :])
        Yc = np.conj(Y).T
        J = np.concatenate([Yc, 1j * Yc, np.conj(dt).T * alpha, np.conj(dp).T * alpha], axis=1)
        J = J * weights[:, None]
        return np.concatenate([J.real, J.imag])

    # LM rejects tolerances at or below machine epsilon
    step_tol = max(tol * 1e-5, 4 * np.finfo(float).eps)
    res = least_squares(
        residual, x0, jac=jacobian, method="lm", xtol=step_tol, ftol=step_tol, gtol=step_tol, max_nfev=maxiter,
    )
    return res.x


def refine_least_squares(
    fhat: SpectrumTriangle,
    init: DiracEnsemble,
    maxiter: int = 2000,
    tol: float = 1e-10,
    method: str = "nelder-mead",
    weights=None,
) -> DiracEnsemble:
    """Polish spike parameters by minimizing the spectral misfit.

    Works on the real parameters ``(Re alpha, Im alpha, theta, phi)``.
    ``method="nelder-mead"`` is derivative free; ``"gauss-newton"`` runs
    Levenberg-Marquardt with analytic harmonic derivatives and converges to
    machine precision in a handful of iterations from a close start. The
    result never has a larger misfit than ``init``; ``init`` is returned if the
    search fails to improve or produces coincident spikes. ``weights`` scales
    each coefficient's residual, see :func:`kernel_weights`.
    """
    method = _refine_method(method)
    if method is None:
        return init
    K = init.K
    L = fhat.L
    target = fhat.coeffs
    weights = np.ones(target.size) if weights is None else np.asarray(weights, dtype=float)

    def objective(params):
        alpha = params[:K] + 1j * params[K : 2 * K]
        Y = harmonic_matrix(L, params[2 * K : 3 * K], params[3 * K :])
        return float(np.sum(np.abs((target - np.conj(Y).T @ alpha) * weights) ** 2))

    x0 = np.concatenate([init.alpha.real, init.alpha.imag, init.theta, init.phi])
    f0 = objective(x0)
    if f0 == 0.0:
        return init
    if method == "nelder-mead":
        x = _nelder_mead(fhat, init, x0, f0, objective, maxiter, tol)
    else:
        x = _gauss_newton(fhat, init, x0, maxiter, tol, weights)
    f1 = objective(x)
    if not np.isfinite(f1) or f1 > f0:
        log.debug("refinement diverged (%.3g > %.3g); keeping the initial estimate", f1, f0)
        return init
    alpha, theta, phi = _unpack(x, K)
    try:
        return DiracEnsemble(alpha, theta, phi)
    except (ValueError, SphereFRIError):
        return init

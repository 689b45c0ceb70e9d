"""Detection and removal of sparse corruptions on an oversampled equiangular grid.

A bandwidth-``L`` signal sampled on the band-``L'`` grid has no spectral
energy at degrees ``L <= l < L'``. A handful of corrupted nodes acts there as a
spike ensemble with amplitudes ``a_p s_pq`` (quadrature weight times
corruption), so the orders ``|m| >= L`` feed an annihilating filter that
locates them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..exceptions import DegenerateConfigurationError, UnreliableRecoveryError
from ..fri import build_annihilating_matrix, column_weights, solve_annihilating_filter, spectrum_to_data_matrix
from ..sphere import SpectrumTriangle, harmonic_matrix, triangle_lm
from ..transform import SampleSet, dh_grid, dh_spectrum, spectrum_from_samples

ANNIHILATION_TOL = 1e-6
SNAP_FRACTION = 0.25
# rows near the poles enter through sin(theta)^|m| with |m| >= L, so Z is
# legitimately ill-conditioned
RANK_TOL = 1e-14


def max_correctable_corruptions(L: int, Lp: int) -> int:
    """Largest ``K`` with ``(L'-L-K)(L'-L-K+1) >= K``, i.e. ``floor(L'-L-sqrt(L'-L+1)+1)``."""
    if not 0 < L < Lp:
        raise ValueError(f"need 0 < L < L', got L={L}, L'={Lp}")
    n = Lp - L
    K = 0
    while K + 1 <= n and (n - K - 1) * (n - K) >= K + 1:
        K += 1
    return K


@dataclass(frozen=True)
class ShotNoiseConfig:
    """Signal bandwidth ``L``, grid bandwidth ``Lp`` and corruption budget ``K``."""

    L: int
    Lp: int
    K: int

    def __post_init__(self):
        if not 0 < self.L < self.Lp:
            raise ValueError(f"need 0 < L < L', got L={self.L}, L'={self.Lp}")
        if self.K < 0:
            raise ValueError("K must be non-negative")
        kmax = max_correctable_corruptions(self.L, self.Lp)
        if self.K > kmax:
            raise ValueError(f"L={self.L}, L'={self.Lp} corrects at most {kmax} corruptions, asked for {self.K}")


@dataclass(frozen=True)
class Corruption:
    """Additive error ``value`` at grid node ``(p, q)``."""

    p: int
    q: int
    value: complex


@dataclass(frozen=True, eq=False)
class ShotNoiseResult:
    """Corrected grid values, the band-``L`` spectrum, the detected corruptions
    and the relative energy left in the high band after correction."""

    values: np.ndarray
    spectrum: SpectrumTriangle
    corruptions: list
    residual: float


def _grid_values(values, Lp: int) -> np.ndarray:
    values = np.asarray(values, dtype=complex)
    n = 2 * Lp
    if values.size != n * n:
        raise ValueError(f"expected {n * n} values on the band-{Lp} grid, got {values.size}")
    return values.reshape(n, n)


def _high_band(fhat: SpectrumTriangle, L: int) -> np.ndarray:
    l, _ = triangle_lm(fhat.L)
    return l >= L


def detect_shot_noise(values, L: int, Lp: int, K: int) -> list:
    """Locate and size ``K`` corrupted nodes on the band-``Lp`` grid.

    Corruptions must sit on distinct grid rows ``p`` and off the north pole
    row ``p = 0``. Raises :class:`DegenerateConfigurationError` when the rows
    cannot be separated (shared or polar rows) and
    :class:`UnreliableRecoveryError` when the high band is not explained by
    ``K`` corruptions.
    """
    cfg = ShotNoiseConfig(L, Lp, K)
    grid_values = _grid_values(values, Lp)
    if K == 0:
        return []
    grid = dh_grid(Lp)
    ghat = dh_spectrum(grid_values, Lp, band=Lp)
    d = spectrum_to_data_matrix(ghat)
    orders = []
    for a in range(cfg.L, Lp - K):
        orders += [a, -a]
    Z = build_annihilating_matrix(d, K, orders=orders)
    h = solve_annihilating_filter(Z, rank_tol=RANK_TOL)
    scale = np.linalg.norm(Z, 2)
    if scale == 0:
        raise DegenerateConfigurationError("high band is empty; no corruption is visible")
    misfit = np.linalg.norm(Z @ h.taps.conj()) / scale
    if misfit > ANNIHILATION_TOL:
        raise UnreliableRecoveryError(
            f"annihilation residual {misfit:.3g} exceeds {ANNIHILATION_TOL:g}; more than K={K} corruptions?"
        )

    # roots near the poles are ill-conditioned; snap each to the nearest row
    # cosine and let the high-band residual below validate the result
    roots = h.roots()
    nodes = np.cos(grid.theta)
    gaps = np.abs(np.diff(nodes))
    reach = SNAP_FRACTION * np.minimum(np.r_[np.inf, gaps], np.r_[gaps, np.inf])
    dist = np.abs(roots[:, None] - nodes[None, :])
    p = np.argmin(dist, axis=1)
    if np.any(dist[np.arange(K), p] > reach[p]):
        raise UnreliableRecoveryError(f"filter roots {roots} are not near any grid row")
    if np.any(p == 0):
        raise DegenerateConfigurationError("a corruption sits on the pole row and cannot be located")
    if np.unique(p).size < K:
        raise DegenerateConfigurationError("corruptions share a grid row")
    x = np.cos(grid.theta[p])

    # v_m = beta e^{-i m phi} sin^|m| theta, so the ratio of two orders gives phi
    vL = column_weights(d, x, cfg.L)
    vL1 = column_weights(d, x, cfg.L + 1)
    phi = np.angle(vL / vL1) % (2 * np.pi)
    q = np.rint(phi / (np.pi / Lp)).astype(int) % (2 * Lp)

    # amplitudes a_p s_pq by least squares on the high band
    high = _high_band(ghat, cfg.L)
    Y = harmonic_matrix(Lp, grid.theta[p], grid.phi[q])
    A = np.conj(Y).T[high]
    beta, *_ = np.linalg.lstsq(A, ghat.coeffs[high], rcond=None)
    target = np.linalg.norm(ghat.coeffs[high])
    residual = np.linalg.norm(A @ beta - ghat.coeffs[high]) / target
    if residual > ANNIHILATION_TOL:
        raise UnreliableRecoveryError(f"high band not explained by the located nodes (residual {residual:.3g})")
    s = beta / grid.weights[p]
    order = np.lexsort((q, p))
    return [Corruption(int(p[k]), int(q[k]), complex(s[k])) for k in order]


def remove_shot_noise(values, L: int, Lp: int, K: int, strategy: str = "subtract") -> ShotNoiseResult:
    """Detect corruptions, correct the grid and return the band-``L`` spectrum.

    ``strategy="subtract"`` removes the estimated corruption values;
    ``"discard"`` drops the corrupted nodes and refits the spectrum by least
    squares on the remaining ones.
    """
    if strategy not in ("subtract", "discard"):
        raise ValueError(f"unknown strategy {strategy!r}; use 'subtract' or 'discard'")
    grid_values = _grid_values(values, Lp)
    corruptions = detect_shot_noise(grid_values, L, Lp, K)
    corrected = grid_values.copy()
    if strategy == "subtract":
        for c in corruptions:
            corrected[c.p, c.q] -= c.value
        fhat = dh_spectrum(corrected, L, band=Lp)
    else:
        grid = dh_grid(Lp)
        keep = np.ones(corrected.shape, dtype=bool)
        for c in corruptions:
            keep[c.p, c.q] = False
        th, ph = grid.mesh()
        mask = keep.ravel()
        fhat = spectrum_from_samples(SampleSet(th[mask], ph[mask], corrected.ravel()[mask]), L, method="svd")
        corrected = (harmonic_matrix(L, th, ph) @ fhat.coeffs).reshape(corrected.shape)
    full = dh_spectrum(corrected, Lp, band=Lp)
    high = _high_band(full, L)
    norm = np.linalg.norm(full.coeffs)
    residual = float(np.linalg.norm(full.coeffs[high]) / norm) if norm > 0 else 0.0
    return ShotNoiseResult(corrected, fhat, corruptions, residual)

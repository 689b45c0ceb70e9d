"""Noise models, Cramer-Rao bounds for a single spike, and Monte Carlo scoring.

The bound treats one spike with real amplitude observed through ``L``-band
lowpass samples ``f_n = alpha sum_lm conj(Y_l^m(xi_0)) Y_l^m(xi_n)`` in
i.i.d. Gaussian noise.
"""

from __future__ import annotations

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares, linear_sum_assignment
from scipy.stats import bootstrap

from .exceptions import RankDeficiencyError, SphereFRIError
from .fri import recover_diracs
from .sphere import (
    DiracEnsemble,
    dirac_spectrum,
    great_circle_distance,
    harmonic_gradients,
    harmonic_matrix,
    wrap_azimuth,
)
from .transform import SampleSet, synthesize_samples

log = logging.getLogger(__name__)

MAX_FISHER_CONDITION = 1e12


@dataclass(frozen=True)
class ParamVector:
    """Parameters ``(alpha0, theta0, phi0)`` of one real-amplitude spike."""

    alpha0: float
    theta0: float
    phi0: float

    def __post_init__(self):
        if not 0.0 < self.theta0 < math.pi:
            raise ValueError(f"theta0 must lie strictly inside (0, pi), got {self.theta0}")
        object.__setattr__(self, "alpha0", float(self.alpha0))
        object.__setattr__(self, "phi0", float(wrap_azimuth(self.phi0)))

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha0, self.theta0, self.phi0])

    def ensemble(self) -> DiracEnsemble:
        return DiracEnsemble([self.alpha0], [self.theta0], [self.phi0])


@dataclass(frozen=True)
class NoiseModel:
    """Additive Gaussian noise given either by its standard deviation or by an SNR.

    ``snr_db = 10 log10(sum |f_n|^2 / (N sigma^2))``. ``snr_db=inf`` means no noise.
    """

    sigma: float | None = None
    snr_db: float | None = None

    def __post_init__(self):
        if (self.sigma is None) == (self.snr_db is None):
            raise ValueError("set exactly one of sigma and snr_db")
        if self.sigma is not None and self.sigma < 0:
            raise ValueError("sigma must be non-negative")

    def sigma_for(self, values) -> float:
        """Noise standard deviation for clean samples ``values``."""
        if self.sigma is not None:
            return float(self.sigma)
        if math.isinf(self.snr_db) and self.snr_db > 0:
            return 0.0
        values = np.asarray(values)
        power = np.sum(np.abs(values) ** 2) / values.size
        return float(np.sqrt(power / 10.0 ** (self.snr_db / 10.0)))


def empirical_snr_db(clean, noisy) -> float:
    clean = np.asarray(clean)
    noise = np.asarray(noisy) - clean
    return float(10 * np.log10(np.sum(np.abs(clean) ** 2) / np.sum(np.abs(noise) ** 2)))


def add_noise(samples: SampleSet, noise: NoiseModel, rng: np.random.Generator) -> SampleSet:
    """Add i.i.d. Gaussian noise.

    Real-valued samples (all imaginary parts zero) get real noise of variance
    ``sigma^2``; complex samples get independent real and imaginary parts of
    variance ``sigma^2 / 2`` each.
    """
    sigma = noise.sigma_for(samples.values)
    if sigma == 0.0:
        return samples
    values = samples.values
    if np.all(values.imag == 0):
        eps = sigma * rng.standard_normal(values.size)
    else:
        eps = sigma / np.sqrt(2) * (rng.standard_normal(values.size) + 1j * rng.standard_normal(values.size))
    return samples.with_values(values + eps)


def mw_grid_L2():
    """Six-node equiangular grid at bandwidth 2: ``theta in {pi/3, pi}`` by ``phi in {0, 2pi/3, 4pi/3}``.

    Ordered with azimuth outermost. The three ``theta = pi`` nodes coincide
    physically at the south pole.
    """
    theta = np.tile([np.pi / 3, np.pi], 3)
    phi = np.repeat([0.0, 2 * np.pi / 3, 4 * np.pi / 3], 2)
    return theta, phi


# ---------------------------------------------------------------------------
# Fisher information
# ---------------------------------------------------------------------------

def model_samples(z: ParamVector, theta, phi, L: int) -> np.ndarray:
    """Noiseless lowpass samples ``f_n(z)`` at the given points."""
    Yn = harmonic_matrix(L, theta, phi)
    Y0 = harmonic_matrix(L, [z.theta0], [z.phi0])[0]
    return z.alpha0 * (Yn @ np.conj(Y0))


def model_derivatives(z: ParamVector, theta, phi, L: int) -> np.ndarray:
    """``(N, 3)`` array of ``df_n/d(alpha0, theta0, phi0)``.

    The colatitude derivative uses the ladder form of ``dY/dtheta``, which is
    finite everywhere; the pole is still rejected because the azimuth is then
    unidentifiable.
    """
    if not 0.0 < z.theta0 < math.pi:
        raise ValueError("derivatives are undefined with the spike on a pole")
    Yn = harmonic_matrix(L, theta, phi)
    Y0, dt0, dp0 = (a[0] for a in harmonic_gradients(L, [z.theta0], [z.phi0]))
    d_alpha = Yn @ np.conj(Y0)
    d_theta = z.alpha0 * (Yn @ np.conj(dt0))
    d_phi = z.alpha0 * (Yn @ np.conj(dp0))
    return np.stack([d_alpha, d_theta, d_phi], axis=1)


def fisher_information(z: ParamVector, theta, phi, sigma: float, L: int) -> np.ndarray:
    """``sigma^-2 Re sum_n grad f_n grad f_n^H``, symmetrized."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    G = model_derivatives(z, theta, phi, L)
    info = np.real(G.T @ np.conj(G)) / sigma**2
    return 0.5 * (info + info.T)


def crlb(z: ParamVector, theta, phi, sigma: float, L: int) -> np.ndarray:
    """Variance bounds ``diag(I^-1)`` for ``(alpha0, theta0, phi0)``."""
    info = fisher_information(z, theta, phi, sigma, L)
    cond = np.linalg.cond(info)
    if not np.isfinite(cond) or cond > MAX_FISHER_CONDITION:
        raise RankDeficiencyError(f"Fisher information is singular (condition {cond:.3g})")
    return np.diag(np.linalg.inv(info)).copy()


def ml_estimate(samples: SampleSet, init: ParamVector, L: int) -> ParamVector:
    """Maximum-likelihood ``(alpha0, theta0, phi0)`` under real Gaussian noise.

    Nonlinear least squares on the real sample misfit, started at ``init``.
    """
    target = samples.values

    def residual(x):
        Yn = harmonic_matrix(L, samples.theta, samples.phi)
        Y0 = harmonic_matrix(L, [x[1]], [x[2]])[0]
        r = x[0] * (Yn @ np.conj(Y0)) - target
        return np.concatenate([r.real, r.imag])

    def jacobian(x):
        z = ParamVector(x[0], float(np.clip(x[1], 1e-12, np.pi - 1e-12)), x[2])
        G = model_derivatives(z, samples.theta, samples.phi, L)
        return np.concatenate([G.real, G.imag])

    res = least_squares(residual, init.as_array(), jac=jacobian, method="lm")
    a, t, p = res.x
    if t < 0:
        t, p = -t, p + np.pi
    t = math.fmod(t, 2 * np.pi)
    if t > np.pi:
        t, p = 2 * np.pi - t, p + np.pi
    return ParamVector(a, float(np.clip(t, 1e-12, np.pi - 1e-12)), p)


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatchResult:
    """Errors of an estimate after optimal spike-to-spike assignment.

    ``assignment[k]`` is the index in the estimate matched to truth spike ``k``.
    """

    assignment: np.ndarray
    mse_greatcircle: float
    mse_theta_phi: float
    mse_amplitude: float
    max_angle: float
    max_relative_amplitude: float


def _azimuth_difference(a, b):
    return np.angle(np.exp(1j * (np.asarray(a) - np.asarray(b))))


def match_and_mse(truth: DiracEnsemble, est: DiracEnsemble) -> MatchResult:
    """Match spikes minimizing total great-circle distance and report errors.

    ``mse_theta_phi`` is the mean over spikes of ``dtheta^2 + dphi^2`` with the
    azimuth difference wrapped to ``(-pi, pi]``.
    """
    if truth.K != est.K:
        raise ValueError(f"cannot match {truth.K} spikes against {est.K}")
    K = truth.K
    cost = great_circle_distance(truth.theta[:, None], truth.phi[:, None], est.theta[None, :], est.phi[None, :])
    if K <= 6:
        best = None
        for perm in itertools.permutations(range(K)):
            c = cost[np.arange(K), perm].sum()
            if best is None or c < best[0]:
                best = (c, perm)
        assignment = np.array(best[1])
    else:
        _, assignment = linear_sum_assignment(cost)
    d = cost[np.arange(K), assignment]
    dtheta = truth.theta - est.theta[assignment]
    dphi = _azimuth_difference(truth.phi, est.phi[assignment])
    dalpha = np.abs(truth.alpha - est.alpha[assignment])
    return MatchResult(
        assignment=assignment,
        mse_greatcircle=float(np.mean(d**2)),
        mse_theta_phi=float(np.mean(dtheta**2 + dphi**2)),
        mse_amplitude=float(np.mean(dalpha**2)),
        max_angle=float(d.max()),
        max_relative_amplitude=float(np.max(dalpha / np.abs(truth.alpha))),
    )


def bootstrap_mean_ci(values, level: float = 0.95, n_resamples: int = 2000, seed: int = 0):
    """Percentile bootstrap confidence interval ``(low, high)`` of the mean."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError("need at least two values for a bootstrap interval")
    if np.all(values == values[0]):
        return float(values[0]), float(values[0])
    res = bootstrap(
        (values,), np.mean, confidence_level=level, n_resamples=n_resamples,
        method="percentile", random_state=np.random.default_rng(seed),
    )
    return float(res.confidence_interval.low), float(res.confidence_interval.high)


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

MSE_COLUMNS = ("snr_db", "trials", "failures", "mse_theta_phi", "mse_greatcircle", "crlb_theta", "crlb_phi")


@dataclass(frozen=True)
class MonteCarloConfig:
    """Single-spike MSE sweep over SNR values.

    ``theta``/``phi`` are the sample points (default: the six-node grid).
    ``refine`` is passed to :func:`recover_diracs`.
    """

    truth: ParamVector
    snr_db: tuple
    trials: int
    seed: int = 0
    L: int = 2
    refine: object = "nelder-mead"
    theta: tuple | None = None
    phi: tuple | None = None
    imag_tol: float = 0.1
    jobs: int = 1

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be positive")
        if len(self.snr_db) == 0:
            raise ValueError("need at least one SNR value")
        if self.L < 2:
            raise ValueError("L must be at least 2")

    def points(self):
        if self.theta is None:
            return mw_grid_L2()
        return np.asarray(self.theta, float), np.asarray(self.phi, float)


@dataclass
class MonteCarloResult:
    rows: list
    errors: dict = field(default_factory=dict)  # snr -> per-trial squared (theta, phi) errors

    @property
    def columns(self):
        return MSE_COLUMNS


def _mc_trial(args):
    cfg, snr_index, trial = args
    rng = np.random.default_rng([cfg.seed, snr_index, trial])
    theta, phi = cfg.points()
    truth = cfg.truth.ensemble()
    clean = synthesize_samples(dirac_spectrum(truth, cfg.L), theta, phi)
    clean = clean.with_values(clean.values.real)
    noisy = add_noise(clean, NoiseModel(snr_db=cfg.snr_db[snr_index]), rng)
    try:
        est = recover_diracs(noisy, cfg.L, 1, rng, refine=cfg.refine, imag_tol=cfg.imag_tol)
    except SphereFRIError as exc:
        log.debug("trial %d at %s dB failed: %s", trial, cfg.snr_db[snr_index], exc)
        return None
    m = match_and_mse(truth, est)
    return m.mse_theta_phi, m.mse_greatcircle


def monte_carlo_mse(cfg: MonteCarloConfig) -> MonteCarloResult:
    """Run ``cfg.trials`` recoveries per SNR and tabulate MSE against the bound.

    Failed trials are counted in ``failures`` and excluded from the means.
    Each trial seeds its own generator from ``(seed, snr index, trial)``.
    """
    theta, phi = cfg.points()
    clean = model_samples(cfg.truth, theta, phi, cfg.L)
    tasks = [(cfg, i, t) for i in range(len(cfg.snr_db)) for t in range(cfg.trials)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(_mc_trial, tasks, chunksize=max(1, len(tasks) // (4 * cfg.jobs))))
    else:
        outcomes = [_mc_trial(t) for t in tasks]
    rows = []
    errors = {}
    for i, snr in enumerate(cfg.snr_db):
        chunk = outcomes[i * cfg.trials : (i + 1) * cfg.trials]
        ok = [c for c in chunk if c is not None]
        tp = np.array([c[0] for c in ok])
        gc = np.array([c[1] for c in ok])
        errors[snr] = tp
        sigma = NoiseModel(snr_db=snr).sigma_for(clean)
        if sigma > 0:
            bound = crlb(cfg.truth, theta, phi, sigma, cfg.L)
        else:
            bound = np.zeros(3)
        rows.append(
            dict(
                snr_db=float(snr),
                trials=cfg.trials,
                failures=cfg.trials - len(ok),
                mse_theta_phi=float(tp.mean()) if ok else float("nan"),
                mse_greatcircle=float(gc.mean()) if ok else float("nan"),
                crlb_theta=float(bound[1]),
                crlb_phi=float(bound[2]),
            )
        )
    return MonteCarloResult(rows, errors)

"""Independent reference values, frozen to ``frozen.json``.

Uses only scipy and mpmath (never the package under test). Rerun with
``python tests/oracles/generate.py`` to regenerate.
"""

import json
from pathlib import Path

import mpmath as mp
import numpy as np
from scipy.special import lpmv, sph_harm_y

mp.mp.dps = 40
rng = np.random.default_rng(20240601)
out = {}

# harmonics: N P_l^|m|(cos theta) e^{i m phi}, with the Condon-Shortley phase
# inside P (as lpmv has it) and an extra (-1)^m in N for positive m
def harmonic(l, m, theta, phi):
    am = abs(m)
    sign = (-1) ** ((m + am) // 2)
    norm = sign * np.sqrt((2 * l + 1) / (4 * np.pi) * mp.factorial(l - am) / mp.factorial(l + am))
    return complex(float(norm) * lpmv(am, l, np.cos(theta)) * np.exp(1j * m * phi))

rows = []
for _ in range(40):
    l = int(rng.integers(0, 12))
    m = int(rng.integers(-l, l + 1))
    theta, phi = float(rng.uniform(0, np.pi)), float(rng.uniform(0, 2 * np.pi))
    y = harmonic(l, m, theta, phi)
    rows.append([l, m, theta, phi, y.real, y.imag])
out["harmonics"] = rows
# scipy's harmonic at the same points; it equals (-1)^m times the above
out["scipy_harmonics"] = [
    [l, m, t, p, complex(sph_harm_y(l, m, t, p)).real, complex(sph_harm_y(l, m, t, p)).imag] for l, m, t, p, *_ in rows
]

# associated Legendre with Condon-Shortley phase
out["legendre"] = [[l, m, x, float(lpmv(m, l, x))] for l, m, x in [(0, 0, 0.3), (1, 1, 0.6), (2, 0, 0.5), (3, 2, -0.4), (7, 3, 0.81), (12, 5, -0.2)]]

# Driscoll-Healy colatitude weights (closed form), exact for sum_p a_p P_l(cos theta_p) = sqrt(2) delta_l0
def dh_closed_form(B):
    p = np.arange(2 * B)
    t = np.pi * p / (2 * B)
    k = np.arange(B)[:, None]
    s = np.sum(np.sin((2 * k + 1) * t[None, :]) / (2 * k + 1), axis=0)
    return (np.sqrt(2) / B) * np.sin(t) * s

out["dh_weights"] = {str(B): dh_closed_form(B).tolist() for B in (1, 2, 4, 7)}

# spherical Bessel values and the rigid-sphere mode strength
def sj(l, x):
    return mp.sqrt(mp.pi / (2 * x)) * mp.besselj(l + mp.mpf(1) / 2, x)

def sy(l, x):
    return mp.sqrt(mp.pi / (2 * x)) * mp.bessely(l + mp.mpf(1) / 2, x)

def dsj(l, x):
    return mp.diff(lambda z: sj(l, z), x)

def dsy(l, x):
    return mp.diff(lambda z: sy(l, z), x)

bes = []
for l, x in [(0, 0.5), (1, 2.0), (5, 3.7), (12, 14.6), (20, 9.0), (30, 73.3), (40, 60.0), (3, 0.01)]:
    x = mp.mpf(x)
    bes.append([l, float(x), float(sj(l, x)), float(sy(l, x)), float(dsj(l, x)), float(dsy(l, x))])
out["bessel"] = bes

modes = []
for l, kr in [(0, 3.66), (1, 3.66), (4, 3.66), (10, 14.65), (25, 14.65)]:
    kr = mp.mpf(kr)
    h = sj(l, kr) + 1j * sy(l, kr)
    dh = dsj(l, kr) + 1j * dsy(l, kr)
    b = sj(l, kr) - dsj(l, kr) / dh * h
    modes.append([l, float(kr), float(mp.re(b)), float(mp.im(b))])
out["mode_strength"] = modes

# analytic zonal kernel of the rigid-sphere Green's function:
# h_l = i kappa b_l(kappa r) h_l(kappa d) sqrt((2l+1)/(4 pi))
def ssl_kernel(nu, r, d, L, c=343.0):
    kappa = 2 * mp.pi * nu / c
    vals = []
    for l in range(L):
        h_r = sj(l, kappa * r) + 1j * sy(l, kappa * r)
        dh_r = dsj(l, kappa * r) + 1j * dsy(l, kappa * r)
        b = sj(l, kappa * r) - dsj(l, kappa * r) / dh_r * h_r
        h_d = sj(l, kappa * d) + 1j * sy(l, kappa * d)
        v = 1j * kappa * b * h_d * mp.sqrt((2 * l + 1) / (4 * mp.pi))
        vals.append([float(mp.re(v)), float(mp.im(v))])
    return vals

out["ssl_kernel_1khz"] = ssl_kernel(1000, 0.2, 3.0, 12)

# diffusion aliasing: tail of exp(-2 l (l+1) k t) / (2l+1)
def eps(k, t, L):
    w = lambda l: mp.e ** (-2 * l * (l + 1) * k * t) / (2 * l + 1)
    total = mp.nsum(w, [0, mp.inf])
    return float(mp.nsum(w, [L, mp.inf]) / total)

out["aliasing_k0.1"] = [[L, eps(mp.mpf("0.1"), 1, L)] for L in range(1, 12)]

# single-spike CRLB on the six-node L=2 grid: f_n = a sum_l (2l+1)/(4pi) P_l(cos gamma_n),
# gradient by mpmath central differences, Fisher = J^T J / sigma^2
grid = [(mp.pi / 3, 0), (mp.pi, 0), (mp.pi / 3, 2 * mp.pi / 3), (mp.pi, 2 * mp.pi / 3), (mp.pi / 3, 4 * mp.pi / 3), (mp.pi, 4 * mp.pi / 3)]

def field(params, L=2):
    a, t0, p0 = params
    vals = []
    for t, p in grid:
        cg = mp.cos(t) * mp.cos(t0) + mp.sin(t) * mp.sin(t0) * mp.cos(p - p0)
        vals.append(a * sum((2 * l + 1) / (4 * mp.pi) * mp.legendre(l, cg) for l in range(L)))
    return vals

def crlb(params, sigma=1):
    h = mp.mpf("1e-15")
    cols = []
    for i in range(3):
        up = list(params); dn = list(params)
        up[i] += h; dn[i] -= h
        cols.append([(u - d) / (2 * h) for u, d in zip(field(up), field(dn))])
    J = mp.matrix(len(grid), 3)
    for i in range(3):
        for n in range(len(grid)):
            J[n, i] = cols[i][n]
    F = (J.T * J) / sigma**2
    inv = F ** -1
    return [float(inv[i, i]) for i in range(3)]

out["crlb_sigma1"] = {
    "pi/4": crlb([mp.mpf(1), mp.pi / 4, mp.mpf("0.7")]),
    "pi/2-0.1": crlb([mp.mpf(1), mp.pi / 2 - mp.mpf("0.1"), mp.mpf("0.7")]),
}

Path(__file__).with_name("frozen.json").write_text(json.dumps(out, indent=1) + "\n")

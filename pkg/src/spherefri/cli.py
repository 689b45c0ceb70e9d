"""Command-line experiments: ``spherefri <command> [flags]``.

Every command validates its parameters before doing any work, runs seeded
trials (trial ``t`` draws from ``default_rng([seed, t])``, so results do not
depend on ``--jobs``), writes one CSV table plus a JSON mirror and a
``manifest.json`` to ``--out``, and records per-trial exceptions as failures
instead of aborting. Precedence is flags, then ``--config``, then defaults.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .apps.acoustics import SoundSource, SSLConfig, localize_sound_sources, simulate_array
from .apps.diffusion import DiffusionConfig, aliasing_energy, localize_diffusion_sources, simulate_diffusion
from .apps.shotnoise import ShotNoiseConfig, remove_shot_noise
from .estimation import MSE_COLUMNS, MonteCarloConfig, NoiseModel, ParamVector, add_noise, match_and_mse, monte_carlo_mse
from .exceptions import SphereFRIError
from .fri import REFINE_METHODS, max_recoverable_diracs, min_bandwidth, recover_diracs
from .io import emit_csv, emit_json, load_config
from .sphere import DiracEnsemble, SpectrumTriangle, dirac_spectrum
from .transform import dh_grid, dh_synthesize, fibonacci_sphere_points, random_sphere_points, synthesize_samples

COMMANDS = ("recover", "diffusion", "shotnoise", "ssl", "crlb", "benchmark")
COMMON = {"seed": 0, "trials": 100, "jobs": 1, "out": "out", "snr": "inf", "refine": "none"}
PARAMS = {
    "recover": {"K": 9, "L": None, "samples": None, "points": "random"},
    "diffusion": {"K": 2, "L": 7, "k": 0.1, "t0": 1.0, "samples": 49, "points": "fibonacci", "bandlimited": False},
    "shotnoise": {"K": 4, "L": 6, "Lp": 12, "strategy": "subtract"},
    "ssl": {
        "K": 2, "L": None, "nu": 1000.0, "r": 0.2, "d_ref": 3.0, "c": 343.0,
        "d_min": None, "d_max": None, "mics": None, "bandlimited": True, "scene": None,
        "candidates": 4, "select": "conditioning",
    },
    "crlb": {"theta0": math.pi / 4, "phi0": 0.7, "alpha0": 1.0, "snrs": "0,10,20,30,40,50,60"},
    "benchmark": {"K": "1..9"},
}
# commands whose defaults differ from COMMON
COMMAND_DEFAULTS = {
    "recover": {"refine": "gauss-newton"},
    "diffusion": {"snr": "30", "trials": 200, "refine": "gauss-newton"},
    "ssl": {"refine": "gauss-newton"},
    "crlb": {"refine": "nelder-mead"},
}
EXACT_TOL = 1e-7


class ConfigError(ValueError):
    """Invalid or unknown configuration."""


# ---------------------------------------------------------------------------
# Parameter handling
# ---------------------------------------------------------------------------

def parse_snr(value) -> float:
    """``inf`` (noiseless) or a number of decibels."""
    text = str(value).strip().lower()
    if text in ("inf", "+inf", "infinity", "none"):
        return math.inf
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad SNR {value!r}") from exc


def parse_k_range(value) -> list:
    """``"a..b"``, ``"a,b,c"`` or a single integer."""
    text = str(value).strip()
    m = re.fullmatch(r"(\d+)\.\.(\d+)", text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if lo < 1 or hi < lo:
            raise ConfigError(f"bad range {value!r}")
        return list(range(lo, hi + 1))
    try:
        ks = [int(v) for v in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad K list {value!r}") from exc
    if any(k < 1 for k in ks):
        raise ConfigError("K values must be positive")
    return ks


def _refine(value):
    text = str(value).lower()
    if text in ("none", "false", "off", "0"):
        return False
    if text not in REFINE_METHODS:
        raise ConfigError(f"unknown refinement {value!r}; use none or one of {', '.join(REFINE_METHODS)}")
    return text


def _int(cfg, key, minimum=None):
    value = cfg[key]
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        if isinstance(value, str) and re.fullmatch(r"-?\d+", value.strip()):
            value = int(value)
        else:
            raise ConfigError(f"{key} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key} must be at least {minimum}, got {value}")
    cfg[key] = int(value)
    return cfg[key]


def _float(cfg, key, positive=False):
    try:
        value = float(cfg[key])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key} must be a number, got {cfg[key]!r}") from exc
    if positive and not value > 0:
        raise ConfigError(f"{key} must be positive, got {value}")
    cfg[key] = value
    return value


def _bool(cfg, key):
    value = cfg[key]
    if isinstance(value, str):
        value = value.lower() in ("1", "true", "yes", "on")
    cfg[key] = bool(value)
    return cfg[key]


def resolve_config(command: str, flags: dict, file_config: dict | None = None) -> dict:
    """Merge defaults, config file and flags, then validate every parameter."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}")
    cfg = dict(COMMON)
    cfg.update(COMMAND_DEFAULTS.get(command, {}))
    cfg.update(PARAMS[command])
    allowed = set(cfg)
    if file_config:
        file_config = dict(file_config)
        named = file_config.pop("command", command)
        if named != command:
            raise ConfigError(f"config file is for {named!r}, not {command!r}")
        params = file_config.pop("params", {}) or {}
        if not isinstance(params, dict):
            raise ConfigError("params must be a mapping")
        for source in (file_config, params):
            unknown = set(source) - allowed
            if unknown:
                raise ConfigError(f"unknown config keys for {command}: {', '.join(sorted(unknown))}")
            cfg.update(source)
    for key, value in flags.items():
        if value is None:
            continue
        if key not in allowed:
            raise ConfigError(f"--{key} does not apply to {command}")
        cfg[key] = value
    return _validate(command, cfg)


def _validate(command: str, cfg: dict) -> dict:
    _int(cfg, "seed", 0)
    _int(cfg, "trials", 1)
    _int(cfg, "jobs", 1)
    cfg["out"] = str(cfg["out"])
    cfg["snr"] = parse_snr(cfg["snr"])
    cfg["refine"] = _refine(cfg["refine"])
    if command == "recover":
        K = _int(cfg, "K", 1)
        if cfg["L"] is None:
            cfg["L"] = min_bandwidth(K)
        L = _int(cfg, "L", 2)
        if K > max_recoverable_diracs(L):
            raise ConfigError(f"L={L} recovers at most {max_recoverable_diracs(L)} spikes, asked for K={K}")
        if cfg["samples"] is None:
            cfg["samples"] = L * L
        if _int(cfg, "samples") < L * L:
            raise ConfigError(f"need at least L^2 = {L * L} samples")
        _points(cfg)
    elif command == "diffusion":
        _int(cfg, "K", 1)
        L = _int(cfg, "L", 2)
        try:
            DiffusionConfig(_float(cfg, "k", True), _float(cfg, "t0", True), L, cfg["K"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if cfg["K"] > max_recoverable_diracs(L):
            raise ConfigError(f"L={L} recovers at most {max_recoverable_diracs(L)} spikes")
        if _int(cfg, "samples") < L * L:
            raise ConfigError(f"need at least L^2 = {L * L} samples")
        _points(cfg)
        _bool(cfg, "bandlimited")
    elif command == "shotnoise":
        try:
            ShotNoiseConfig(_int(cfg, "L", 1), _int(cfg, "Lp", 2), _int(cfg, "K", 0))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if cfg["strategy"] not in ("subtract", "discard"):
            raise ConfigError("strategy must be subtract or discard")
    elif command == "ssl":
        _validate_ssl(cfg)
    elif command == "crlb":
        try:
            ParamVector(_float(cfg, "alpha0"), _float(cfg, "theta0"), _float(cfg, "phi0"))
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        cfg["snrs"] = [parse_snr(v) for v in str(cfg["snrs"]).split(",")]
    elif command == "benchmark":
        cfg["K"] = parse_k_range(cfg["K"])
    return cfg


def _points(cfg):
    if cfg["points"] not in ("random", "fibonacci"):
        raise ConfigError("points must be random or fibonacci")


def _validate_ssl(cfg):
    scene = cfg["scene"]
    if scene is not None:
        _load_scene(cfg, scene)
    for key in ("nu", "r", "d_ref", "c"):
        _float(cfg, key, True)
    _int(cfg, "K", 1)
    for key in ("d_min", "d_max"):
        cfg[key] = cfg["d_ref"] if cfg[key] is None else _float(cfg, key, True)
    if not cfg["r"] < cfg["d_min"] <= cfg["d_max"]:
        raise ConfigError("need r < d_min <= d_max")
    try:
        ssl = SSLConfig(cfg["nu"], cfg["r"], cfg["d_ref"], L=cfg["L"], K=cfg["K"], c=cfg["c"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg["L"] = ssl.bandwidth
    if cfg["K"] > max_recoverable_diracs(cfg["L"]):
        raise ConfigError(f"L={cfg['L']} recovers at most {max_recoverable_diracs(cfg['L'])} sources")
    if cfg["mics"] is None:
        cfg["mics"] = f"random:{cfg['L'] ** 2}"
    m = re.fullmatch(r"(random|fibonacci|dh):(\d+)", str(cfg["mics"]))
    if not m:
        raise ConfigError("mics must be random:N, fibonacci:N or dh:B")
    count = int(m.group(2)) if m.group(1) != "dh" else 4 * int(m.group(2)) ** 2
    if count < cfg["L"] ** 2:
        raise ConfigError(f"{count} microphones cannot resolve L={cfg['L']}")
    _int(cfg, "candidates", 1)
    if cfg["select"] not in ("conditioning", "misfit"):
        raise ConfigError("select must be conditioning or misfit")
    _bool(cfg, "bandlimited")


def _load_scene(cfg, path):
    """Fill ssl parameters from a scene file (sources, array, medium, excitation)."""
    scene = load_config(path)
    unknown = set(scene) - {"sources", "array", "medium", "excitation"}
    if unknown:
        raise ConfigError(f"unknown scene keys: {', '.join(sorted(unknown))}")
    sources = scene.get("sources") or []
    if not sources:
        raise ConfigError("scene lists no sources")
    fields = ("alpha_re", "alpha_im", "theta", "phi", "distance")
    parsed = []
    for s in sources:
        if set(s) != set(fields):
            raise ConfigError(f"each source needs exactly {', '.join(fields)}")
        parsed.append([float(s[f]) for f in fields])
    cfg["scene"] = parsed
    cfg["K"] = len(parsed)
    array = scene.get("array") or {}
    if set(array) - {"radius", "mics"}:
        raise ConfigError("array takes radius and mics")
    cfg["r"] = array.get("radius", cfg["r"])
    if "mics" in array:
        cfg["mics"] = array["mics"]
    medium = scene.get("medium") or {}
    if set(medium) - {"c"}:
        raise ConfigError("medium takes c")
    cfg["c"] = medium.get("c", cfg["c"])
    excitation = scene.get("excitation") or {}
    if set(excitation) - {"frequency"}:
        raise ConfigError("excitation takes frequency")
    cfg["nu"] = excitation.get("frequency", cfg["nu"])
    distances = [p[4] for p in parsed]
    cfg["d_min"], cfg["d_max"] = min(distances), max(distances)


# ---------------------------------------------------------------------------
# Trials
# ---------------------------------------------------------------------------

def _sample_points(kind, n, rng):
    if kind == "fibonacci":
        return fibonacci_sphere_points(n)
    return random_sphere_points(n, rng)


def _noisy(samples, snr, rng):
    return add_noise(samples, NoiseModel(snr_db=snr), rng) if math.isfinite(snr) else samples


def _failure(trial, exc):
    return {"trial": trial, "status": type(exc).__name__, "message": str(exc)}


def _recover_trial(cfg, trial):
    rng = np.random.default_rng([cfg["seed"], trial])
    truth = DiracEnsemble.random(cfg["K"], rng)
    theta, phi = _sample_points(cfg["points"], cfg["samples"], rng)
    samples = _noisy(synthesize_samples(dirac_spectrum(truth, cfg["L"]), theta, phi), cfg["snr"], rng)
    try:
        est = recover_diracs(samples, cfg["L"], cfg["K"], rng, refine=cfg["refine"])
    except SphereFRIError as exc:
        return _failure(trial, exc)
    m = match_and_mse(truth, est)
    exact = m.max_angle < EXACT_TOL and m.max_relative_amplitude < EXACT_TOL
    return {"trial": trial, "status": "ok", "max_angle": m.max_angle,
            "max_relative_amplitude": m.max_relative_amplitude, "mse_greatcircle": m.mse_greatcircle,
            "exact": exact}


def _diffusion_trial(cfg, trial):
    rng = np.random.default_rng([cfg["seed"], trial])
    dcfg = DiffusionConfig(cfg["k"], cfg["t0"], cfg["L"], cfg["K"])
    truth = DiracEnsemble.random(cfg["K"], rng)
    theta, phi = _sample_points(cfg["points"], cfg["samples"], rng)
    samples = _noisy(simulate_diffusion(truth, theta, phi, dcfg, bandlimited=cfg["bandlimited"]), cfg["snr"], rng)
    try:
        est = localize_diffusion_sources(samples, dcfg, rng, refine=cfg["refine"],
                                         imag_tol=None if math.isinf(cfg["snr"]) else 0.1)
    except SphereFRIError as exc:
        return _failure(trial, exc)
    m = match_and_mse(truth, est)
    return {"trial": trial, "status": "ok", "max_angle": m.max_angle,
            "max_relative_amplitude": m.max_relative_amplitude, "mse_greatcircle": m.mse_greatcircle}


def _shotnoise_trial(cfg, trial):
    rng = np.random.default_rng([cfg["seed"], trial])
    L, Lp, K = cfg["L"], cfg["Lp"], cfg["K"]
    fhat = SpectrumTriangle(rng.standard_normal(L * L) + 1j * rng.standard_normal(L * L))
    clean = dh_synthesize(fhat, Lp)
    rows = rng.choice(np.arange(1, 2 * Lp), K, replace=False)
    cols = rng.integers(0, 2 * Lp, K)
    values = rng.standard_normal(K) + 1j * rng.standard_normal(K)
    corrupted = clean.copy()
    corrupted[rows, cols] += values
    if math.isfinite(cfg["snr"]):
        corrupted += NoiseModel(snr_db=cfg["snr"]).sigma_for(clean) * (
            rng.standard_normal(clean.shape) + 1j * rng.standard_normal(clean.shape)) / math.sqrt(2)
    try:
        res = remove_shot_noise(corrupted, L, Lp, K, strategy=cfg["strategy"])
    except SphereFRIError as exc:
        return _failure(trial, exc)
    truth = {(int(p), int(q)): v for p, q, v in zip(rows, cols, values)}
    found = {(c.p, c.q): c.value for c in res.corruptions}
    detected = set(found) == set(truth)
    value_error = max((abs(found[k] - truth[k]) for k in truth), default=0.0) if detected else math.inf
    return {"trial": trial, "status": "ok", "detected": detected, "max_value_error": value_error,
            "max_spectrum_error": float(np.abs(res.spectrum.coeffs - fhat.coeffs).max()),
            "high_band_residual": res.residual}


def _mic_points(spec, rng):
    kind, count = spec.split(":")
    count = int(count)
    if kind == "dh":
        return dh_grid(count).mesh()
    return _sample_points(kind, count, rng)


def _ssl_trial(cfg, trial):
    rng = np.random.default_rng([cfg["seed"], trial])
    scfg = SSLConfig(cfg["nu"], cfg["r"], cfg["d_ref"], L=cfg["L"], K=cfg["K"], c=cfg["c"])
    if isinstance(cfg["scene"], list):
        sources = [SoundSource(complex(a, b), t, p, d) for a, b, t, p, d in cfg["scene"]]
    else:
        truth = DiracEnsemble.random(cfg["K"], rng)
        d = rng.uniform(cfg["d_min"], cfg["d_max"], cfg["K"])
        sources = [SoundSource(a, t, p, dd) for a, t, p, dd in zip(truth.alpha, truth.theta, truth.phi, d)]
    truth = DiracEnsemble([s.alpha for s in sources], [s.theta for s in sources], [s.phi for s in sources])
    theta, phi = _mic_points(cfg["mics"], rng)
    bandlimit = cfg["L"] if cfg["bandlimited"] else None
    samples = _noisy(simulate_array(sources, theta, phi, scfg, bandlimit=bandlimit), cfg["snr"], rng)
    try:
        est = localize_sound_sources(samples, scfg, rng, refine=cfg["refine"], imag_tol=0.5 if cfg["refine"] else None,
                                     candidates=cfg["candidates"], select=cfg["select"])
    except SphereFRIError as exc:
        return _failure(trial, exc)
    m = match_and_mse(truth, est)
    return {"trial": trial, "status": "ok", "max_angle": m.max_angle, "max_angle_deg": math.degrees(m.max_angle),
            "mse_greatcircle": m.mse_greatcircle}


TRIALS = {"recover": _recover_trial, "diffusion": _diffusion_trial, "shotnoise": _shotnoise_trial, "ssl": _ssl_trial}
TRIAL_COLUMNS = {
    "recover": ("trial", "status", "max_angle", "max_relative_amplitude", "mse_greatcircle", "exact"),
    "diffusion": ("trial", "status", "max_angle", "max_relative_amplitude", "mse_greatcircle"),
    "shotnoise": ("trial", "status", "detected", "max_value_error", "max_spectrum_error", "high_band_residual"),
    "ssl": ("trial", "status", "max_angle", "max_angle_deg", "mse_greatcircle"),
}


def _run_trial(args):
    command, cfg, trial = args
    return TRIALS[command](cfg, trial)


def _map(command, cfg):
    tasks = [(command, cfg, t) for t in range(cfg["trials"])]
    if cfg["jobs"] > 1:
        with ProcessPoolExecutor(max_workers=cfg["jobs"]) as pool:
            return list(pool.map(_run_trial, tasks))
    return [_run_trial(t) for t in tasks]


def _summary(command, cfg, results):
    ok = [r for r in results if r["status"] == "ok"]
    summary = {"trials": len(results), "failures": len(results) - len(ok)}
    if command == "recover":
        summary["exact"] = sum(bool(r["exact"]) for r in ok)
    elif command == "diffusion":
        summary["within_0.1_rad"] = sum(r["max_angle"] < 0.1 for r in ok)
    elif command == "shotnoise":
        summary["exact"] = sum(r["detected"] and r["max_value_error"] < 1e-8 and r["max_spectrum_error"] < 1e-8 for r in ok)
    elif command == "ssl":
        summary["within_5_deg"] = sum(r["max_angle_deg"] < 5.0 for r in ok)
    statuses = {}
    for r in results:
        if r["status"] != "ok":
            statuses[r["status"]] = statuses.get(r["status"], 0) + 1
    summary["failure_kinds"] = statuses
    return summary


def run(command: str, cfg: dict) -> dict:
    """Execute a validated configuration and write its artifacts; returns the manifest."""
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    if command in TRIALS:
        results = _map(command, cfg)
        columns = TRIAL_COLUMNS[command]
        rows = [[r.get(c, math.nan) for c in columns] for r in results]
        summary = _summary(command, cfg, results)
        errors = [r for r in results if r["status"] != "ok"]
    elif command == "crlb":
        mc = monte_carlo_mse(MonteCarloConfig(
            ParamVector(cfg["alpha0"], cfg["theta0"], cfg["phi0"]), tuple(cfg["snrs"]), cfg["trials"],
            seed=cfg["seed"], refine=cfg["refine"], jobs=cfg["jobs"],
        ))
        columns = MSE_COLUMNS
        rows = [[row[c] for c in columns] for row in mc.rows]
        summary = {"trials": cfg["trials"] * len(cfg["snrs"]), "failures": sum(row["failures"] for row in mc.rows)}
        errors = []
    else:
        columns = ("K", "L_ours", "samples_ours", "samples_baseline", "ratio")
        rows = []
        for K in cfg["K"]:
            L = min_bandwidth(K)
            rows.append([K, L, L * L, 4 * K * K, L * L / (4 * K * K)])
        summary = {"trials": 0, "failures": 0}
        errors = []
    table = out / f"{command}.csv"
    emit_csv(table, columns, rows)
    emit_json(out / f"{command}.json", columns, rows)
    if command == "diffusion":
        Ls = np.arange(1, 16)
        eps = aliasing_energy(cfg["k"], cfg["t0"], Ls)
        emit_csv(out / "aliasing.csv", ("L", "epsilon"), zip(Ls, eps))
    manifest = {
        "command": command,
        "version": __version__,
        "config": _jsonable(cfg),
        "summary": summary,
        "errors": errors,
        "outputs": sorted(p.name for p in out.iterdir() if p.suffix in (".csv", ".json") and p.name != "manifest.json"),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, default=str) + "\n", encoding="utf-8")
    return manifest


def _jsonable(cfg):
    out = {}
    for k, v in cfg.items():
        if isinstance(v, float) and not math.isfinite(v):
            v = str(v)
        elif isinstance(v, list):
            v = [str(x) if isinstance(x, float) and not math.isfinite(x) else x for x in v]
        out[k] = v
    return out


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spherefri", description="Spike recovery on the sphere: experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for command in COMMANDS:
        p = sub.add_parser(command)
        p.add_argument("--config", help="YAML or JSON config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output directory")
        if command != "benchmark":
            p.add_argument("--trials", type=int)
            p.add_argument("--jobs", type=int)
            p.add_argument("--snr", help="SNR in dB or inf for noiseless")
            p.add_argument("--refine", help="none, nelder-mead or gauss-newton")
        if command == "benchmark":
            p.add_argument("--K", help="range a..b or list a,b,c")
        elif command != "crlb":
            p.add_argument("--K", type=int)
        if command in ("recover", "diffusion", "shotnoise", "ssl"):
            p.add_argument("--L", type=int)
        if command == "shotnoise":
            p.add_argument("--Lp", type=int)
        if command == "crlb":
            p.add_argument("--snrs", help="comma-separated SNR list in dB")
            p.add_argument("--theta0", type=float)
        if command == "ssl":
            p.add_argument("--nu", type=float, help="frequency in Hz")
            p.add_argument("--d-min", dest="d_min", type=float)
            p.add_argument("--d-max", dest="d_max", type=float)
            p.add_argument("--mics", help="random:N, fibonacci:N or dh:B")
            p.add_argument("--scene", help="scene file")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = vars(parser.parse_args(argv))
    command = args.pop("command")
    config_path = args.pop("config")
    try:
        file_config = load_config(config_path) if config_path else None
        cfg = resolve_config(command, args, file_config)
    except (ConfigError, OSError, ValueError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc), "command": command}
        print(json.dumps(record), file=sys.stderr)
        return 2
    manifest = run(command, cfg)
    print(json.dumps(manifest["summary"]))
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""CSV and JSON tables, sample and spike serialization, and YAML config files."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np
import yaml

from .sphere import DiracEnsemble
from .transform import SampleSet

SAMPLE_COLUMNS = ("theta", "phi", "re", "im")
GRID_COLUMNS = ("p", "q", "re", "im")
ENSEMBLE_COLUMNS = ("alpha_re", "alpha_im", "theta", "phi")


def format_value(value) -> str:
    """Locale-independent text: integers as is, floats with 17 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return "%.17g" % value
    return str(value)


def _json_value(value):
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # JSON has no inf or nan
        return value if math.isfinite(value) else format_value(value)
    return value


def emit_csv(path, columns, rows) -> Path:
    """Write a UTF-8 CSV with a header row; an empty table gives the header only."""
    path = Path(path)
    columns = list(columns)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"row has {len(row)} fields, header has {len(columns)}")
            writer.writerow([format_value(v) for v in row])
    return path


def emit_json(path, columns, rows) -> Path:
    """Write the table as a JSON list of objects keyed by column name."""
    path = Path(path)
    columns = list(columns)
    records = [{c: _json_value(v) for c, v in zip(columns, row)} for row in rows]
    path.write_text(json.dumps(records, indent=1) + "\n", encoding="utf-8")
    return path


def _parse(text: str):
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def read_csv(path):
    """Columns and rows of a CSV written by :func:`emit_csv`, numbers parsed."""
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        columns = next(reader)
        rows = [[_parse(v) for v in row] for row in reader]
    return columns, rows


def _check_columns(columns, expected):
    if tuple(columns) != tuple(expected):
        raise ValueError(f"expected columns {','.join(expected)}, got {','.join(columns)}")


def write_samples(path, samples: SampleSet) -> Path:
    rows = zip(samples.theta, samples.phi, samples.values.real, samples.values.imag)
    return emit_csv(path, SAMPLE_COLUMNS, rows)


def read_samples(path) -> SampleSet:
    columns, rows = read_csv(path)
    _check_columns(columns, SAMPLE_COLUMNS)
    a = np.array(rows, dtype=float).reshape(-1, 4)
    return SampleSet(a[:, 0], a[:, 1], a[:, 2] + 1j * a[:, 3])


def write_grid(path, values) -> Path:
    """Grid node values (shape ``(2B, 2B)``) as ``p,q,re,im``."""
    values = np.asarray(values, dtype=complex)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError("grid values must be a square 2-D array")
    rows = ((p, q, v.real, v.imag) for (p, q), v in np.ndenumerate(values))
    return emit_csv(path, GRID_COLUMNS, rows)


def read_grid(path) -> np.ndarray:
    columns, rows = read_csv(path)
    _check_columns(columns, GRID_COLUMNS)
    n = int(round(math.sqrt(len(rows))))
    if n * n != len(rows) or n % 2:
        raise ValueError(f"{len(rows)} rows do not form a 2B x 2B grid")
    out = np.full((n, n), np.nan + 0j)
    for p, q, re, im in rows:
        out[int(p), int(q)] = re + 1j * im
    if np.isnan(out.real).any():
        raise ValueError("grid file is missing nodes")
    return out


def write_ensemble(path, f: DiracEnsemble) -> Path:
    rows = zip(f.alpha.real, f.alpha.imag, f.theta, f.phi)
    return emit_csv(path, ENSEMBLE_COLUMNS, rows)


def read_ensemble(path) -> DiracEnsemble:
    columns, rows = read_csv(path)
    _check_columns(columns, ENSEMBLE_COLUMNS)
    a = np.array(rows, dtype=float).reshape(-1, 4)
    return DiracEnsemble(a[:, 0] + 1j * a[:, 1], a[:, 2], a[:, 3])


def load_config(path) -> dict:
    """Nested key-value config from a YAML file (JSON is valid YAML too)."""
    data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"config {path} must hold a mapping at the top level")
    return data

"""
File formats: coincidence histograms, traces, phase masks, JSON reports and
YAML run configurations.

Text tables are comma-separated with ``#`` header lines.  Floats are written
with ``repr`` (shortest round-trip form), so write -> read -> write is
byte-identical.
"""

from __future__ import annotations

import json
import math
import re
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from .errors import ConfigError, DataError, GridError
from .fitting import CoincidenceHistogram
from .holography import OpticalGrid, PhaseMask

_SPLIT = re.compile(r"[,;\t ]+")
PGM_LEVELS = 256


def _fmt(x) -> str:
    x = float(x)
    if x == 0:
        return "0.0"  # drop the sign of negative zero
    return repr(x)


def _parse_rows(path, ncols_min: int):
    """Yield (line_number, header_names, fields) for each data line."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    header = None
    rows = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                names = [t for t in _SPLIT.split(s.lstrip("#").strip()) if t]
                if names:
                    header = names
                continue
            fields = [t for t in _SPLIT.split(s) if t]
            if len(fields) < ncols_min:
                raise DataError(f"{path}:{lineno}: expected {ncols_min} columns, got {len(fields)}")
            rows.append((lineno, fields))
    return header, rows


def _to_float(token: str, path, lineno: int) -> float:
    try:
        v = float(token)
    except ValueError:
        raise DataError(f"{path}:{lineno}: cannot parse {token!r} as a number") from None
    if not math.isfinite(v):
        raise DataError(f"{path}:{lineno}: non-finite value {token!r}")
    return v


def load_histogram(path, label: str | None = None) -> CoincidenceHistogram:
    """Read a two-column (tau_ns, counts) table.

    Raises
    ------
    DataError
        Parse failures (with line number), negative or fractional counts.
    GridError
        Bins that are not uniform within 1e-6 relative.
    """
    _, rows = _parse_rows(path, 2)
    if not rows:
        raise DataError(f"{path}: no data rows")
    tau = np.empty(len(rows))
    counts = np.empty(len(rows), dtype=np.int64)
    for i, (lineno, f) in enumerate(rows):
        tau[i] = _to_float(f[0], path, lineno)
        c = _to_float(f[1], path, lineno)
        if c < 0:
            raise DataError(f"{path}:{lineno}: negative count {f[1]}")
        if c != int(c):
            raise DataError(f"{path}:{lineno}: non-integer count {f[1]}")
        counts[i] = int(c)
    if tau.size > 1:
        d = np.diff(tau)
        w = d[0]  # reference spacing, so the first offending row is reported
        bad = np.nonzero(np.abs(d - w) > 1e-6 * abs(w))[0] if w > 0 else np.arange(d.size)
        if bad.size:
            raise GridError(f"{path}:{rows[bad[0] + 1][0]}: non-uniform bin spacing")
    return CoincidenceHistogram(tau, counts, label=label if label is not None else Path(path).stem)


def save_histogram(hist: CoincidenceHistogram, path) -> Path:
    path = Path(path)
    lines = ["# tau_ns,counts"]
    lines += [f"{_fmt(t)},{int(c)}" for t, c in zip(hist.bin_centers, hist.counts)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def save_table(path, columns: Mapping[str, Sequence[float]]) -> Path:
    """Write equal-length named columns as CSV with a ``#`` header."""
    names = list(columns)
    if not names:
        raise DataError("no columns to write")
    arrs = [np.asarray(columns[n], dtype=float).ravel() for n in names]
    if len({a.size for a in arrs}) != 1:
        raise DataError("columns must have equal length")
    path = Path(path)
    lines = ["# " + ",".join(names)]
    lines += [",".join(_fmt(v) for v in row) for row in zip(*arrs)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def load_table(path) -> dict:
    """Inverse of :func:`save_table`; unnamed columns become col0, col1, ..."""
    header, rows = _parse_rows(path, 1)
    if not rows:
        raise DataError(f"{path}: no data rows")
    width = len(rows[0][1])
    data = np.empty((len(rows), width))
    for i, (lineno, f) in enumerate(rows):
        if len(f) != width:
            raise DataError(f"{path}:{lineno}: expected {width} columns, got {len(f)}")
        data[i] = [_to_float(t, path, lineno) for t in f]
    names = header if header and len(header) == width else [f"col{i}" for i in range(width)]
    return {n: data[:, i] for i, n in enumerate(names)}


def _grid_dict(grid: OpticalGrid) -> dict:
    return {"nx": grid.nx, "ny": grid.ny, "pitch": grid.pitch,
            "wavelength": grid.wavelength, "f_eff": grid.f_eff}


def phase_to_gray(phase: np.ndarray) -> np.ndarray:
    """Linear map [-pi, pi) -> 0..255."""
    g = np.floor((np.asarray(phase) + np.pi) / (2 * np.pi) * PGM_LEVELS)
    return np.clip(g, 0, PGM_LEVELS - 1).astype(np.uint8)


def gray_to_phase(gray: np.ndarray) -> np.ndarray:
    """Bin centres of :func:`phase_to_gray`."""
    return (np.asarray(gray, dtype=float) + 0.5) * (2 * np.pi / PGM_LEVELS) - np.pi


def save_mask(mask: PhaseMask, stem) -> dict:
    """Write ``stem.pgm`` (8-bit binary PGM, row 0 = first array row),
    ``stem.json`` (grid, carrier and gray-level map) and ``stem.npy`` (raw
    float64 phase).  Returns the written paths."""
    stem = Path(stem)
    pgm, side, raw = stem.with_suffix(".pgm"), stem.with_suffix(".json"), stem.with_suffix(".npy")
    gray = phase_to_gray(mask.phase)
    head = f"P5\n{mask.grid.nx} {mask.grid.ny}\n{PGM_LEVELS - 1}\n".encode("ascii")
    pgm.write_bytes(head + gray.tobytes(order="C"))
    meta = {
        "format": "P5 8-bit, row-major, first row at top",
        "gray_to_phase": "phase = (gray + 0.5) * 2*pi/256 - pi",
        "grid": _grid_dict(mask.grid),
        "carrier_rad_per_um": list(mask.carrier),
        "raw": raw.name,
    }
    dump_json(meta, side)
    np.save(raw, np.ascontiguousarray(mask.phase, dtype=np.float64), allow_pickle=False)
    return {"pgm": pgm, "sidecar": side, "raw": raw}


def _read_sidecar(stem: Path):
    side = stem.with_suffix(".json")
    if not side.is_file():
        raise DataError(f"{side}: sidecar missing")
    meta = json.loads(side.read_text(encoding="utf-8"))
    return meta, OpticalGrid(**meta["grid"]), tuple(meta["carrier_rad_per_um"])


def load_mask(stem, source="raw") -> PhaseMask:
    """Read a mask written by :func:`save_mask` from the raw grid or the PGM."""
    stem = Path(stem)
    meta, grid, carrier = _read_sidecar(stem)
    if source == "raw":
        phase = np.load(stem.with_suffix(".npy"), allow_pickle=False)
    elif source == "pgm":
        data = stem.with_suffix(".pgm").read_bytes()
        parts = data.split(maxsplit=4)
        if parts[0] != b"P5" or len(parts) < 5:
            raise DataError(f"{stem}.pgm: not a binary PGM")
        nx, ny, maxval = int(parts[1]), int(parts[2]), int(parts[3])
        body = data[len(data) - nx * ny :]
        if maxval != PGM_LEVELS - 1:
            raise DataError(f"{stem}.pgm: expected maxval 255, got {maxval}")
        phase = gray_to_phase(np.frombuffer(body, dtype=np.uint8).reshape(ny, nx))
    else:
        raise ConfigError(f"unknown mask source {source!r}")
    return PhaseMask(grid, phase, carrier)


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, Path):
        return str(obj)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def dump_json(obj, path=None) -> str:
    """Deterministic JSON (sorted keys, repr floats); written if ``path`` given."""
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def load_config(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: config file not found")
    try:
        cfg = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if cfg is None:
        return {}
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return cfg

"""File formats: dense CSV with header row/column, MatrixMarket coordinate
files with a separate missing-entry list, and JSON reports.

Floats are written with 17 significant digits, which round-trips float64
exactly. In the MatrixMarket convention used here, absent coordinates are
structural zeros (observed); entries listed in the companion mask file are
the unobserved positions.
"""
from __future__ import annotations

import hashlib
import json
import resource
import sys
import time

import numpy as np
from scipy import io as spio
from scipy import sparse

from .exceptions import ConfigError

__all__ = [
    "write_dense_csv",
    "read_dense_csv",
    "write_matrix_market",
    "read_matrix_market",
    "write_mask_file",
    "read_mask_file",
    "write_json",
    "read_json",
    "Manifest",
]


def _fmt(v: float) -> str:
    if np.isnan(v):
        return "NaN"
    return format(v, ".17g")


def write_dense_csv(path, values, row_names=None, col_names=None) -> None:
    """Dense matrix with a header row and a leading label column; NaN = missing."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ConfigError("write_dense_csv expects a 2-D array")
    n, m = values.shape
    row_names = row_names or [f"r{i + 1}" for i in range(n)]
    col_names = col_names or [f"c{j + 1}" for j in range(m)]
    with open(path, "w") as fh:
        fh.write("," + ",".join(col_names) + "\n")
        for i in range(n):
            fh.write(row_names[i] + "," + ",".join(_fmt(v) for v in values[i]) + "\n")


def read_dense_csv(path):
    """Returns (values, row_names, col_names); parse errors carry line/column."""
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if not header:
            raise ConfigError(f"{path}: line 1: empty header")
        col_names = header.split(",")[1:]
        rows, row_names = [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != len(col_names) + 1:
                raise ConfigError(
                    f"{path}: line {lineno}: expected {len(col_names) + 1} fields, "
                    f"got {len(parts)}"
                )
            row_names.append(parts[0])
            try:
                rows.append([float(v) for v in parts[1:]])
            except ValueError as err:
                bad = next(k for k, v in enumerate(parts[1:], start=2)
                           if not _is_float(v))
                raise ConfigError(
                    f"{path}: line {lineno}: column {bad}: not a number"
                ) from err
    if not rows:
        raise ConfigError(f"{path}: no data rows")
    return np.asarray(rows), row_names, col_names


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def write_matrix_market(path, values, mask=None) -> None:
    """Coordinate MatrixMarket of the observed nonzeros; zeros stay implicit."""
    values = np.asarray(values, dtype=float)
    filled = np.where(mask, values, 0.0) if mask is not None else values
    filled = np.where(np.isfinite(filled), filled, 0.0)
    spio.mmwrite(str(path), sparse.coo_matrix(filled), precision=17)


def read_matrix_market(path):
    try:
        mat = spio.mmread(str(path))
    except ValueError as err:
        raise ConfigError(f"{path}: malformed MatrixMarket file: {err}") from err
    return np.asarray(sparse.coo_matrix(mat).todense())


def write_mask_file(path, mask) -> None:
    """1-based 'i j' lines for every unobserved position (row-major order)."""
    miss = np.argwhere(~np.asarray(mask, dtype=bool))
    with open(path, "w") as fh:
        fh.write("% unobserved entries, 1-based 'row col'\n")
        for i, j in miss:
            fh.write(f"{i + 1} {j + 1}\n")


def read_mask_file(path, shape):
    """Boolean observation mask from an unobserved-entry list."""
    mask = np.ones(shape, dtype=bool)
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith(("%", "#")):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ConfigError(f"{path}: line {lineno}: expected 'row col'")
            try:
                i, j = int(parts[0]) - 1, int(parts[1]) - 1
            except ValueError:
                raise ConfigError(f"{path}: line {lineno}: indices must be integers")
            if not (0 <= i < shape[0] and 0 <= j < shape[1]):
                raise ConfigError(f"{path}: line {lineno}: index out of range")
            mask[i, j] = False
    return mask


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def sha256_of(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Manifest:
    """Run metadata: enough to reproduce a run bit-identically single-threaded.

    Wall-clock and memory figures live here (and only here) so every other
    output file is byte-stable across reruns.
    """

    def __init__(self, command: str, config: dict, seed, inputs=None):
        self.started = time.perf_counter()
        self.payload = {
            "command": command,
            "config": _jsonable(config),
            "seed": seed,
            "input_checksums": {
                str(p): sha256_of(p) for p in (inputs or [])
            },
            "gmfkit_version": _version(),
            "python_version": sys.version.split()[0],
        }

    def finish(self, path, elapsed_extra: dict | None = None) -> None:
        self.payload["wall_clock_seconds"] = time.perf_counter() - self.started
        self.payload["peak_rss_mb"] = resource.getrusage(
            resource.RUSAGE_SELF
        ).ru_maxrss / 1024.0
        if elapsed_extra:
            self.payload.update(_jsonable(elapsed_extra))
        write_json(path, self.payload)


def _version() -> str:
    from . import __version__

    return __version__

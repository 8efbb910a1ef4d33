"""Plain-text and binary serialization helpers.

All numeric text output uses 17 significant digits so that float64 values
round-trip exactly. Matrices are written row-major, one row per line,
comma-separated, no header. Manifests are flat ``key = value`` documents.
"""

from __future__ import annotations

import numpy as np

from .errors import DataFormatError

FLOAT_FMT = "%.17g"


def format_float(x) -> str:
    return FLOAT_FMT % float(x)


def save_matrix(path, m) -> None:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    with open(path, "w", encoding="ascii") as fh:
        for row in m:
            fh.write(",".join(format_float(v) for v in row))
            fh.write("\n")


def load_matrix(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(tok) for tok in line.split(",")])
            except ValueError as exc:
                raise DataFormatError(f"bad numeric value in {path}: {exc}", row=lineno)
    if not rows:
        raise DataFormatError(f"empty matrix file: {path}")
    width = len(rows[0])
    for lineno, row in enumerate(rows, start=1):
        if len(row) != width:
            raise DataFormatError(f"ragged matrix row in {path}", row=lineno)
    return np.asarray(rows, dtype=float)


def save_manifest(path, entries: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key in entries:
            fh.write(f"{key} = {_to_text(entries[key])}\n")


def load_manifest(path) -> dict:
    entries = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataFormatError(f"expected 'key = value' in {path}", row=lineno)
            key, _, value = line.partition("=")
            entries[key.strip()] = value.strip()
    return entries


def _to_text(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return format_float(value)
    if isinstance(value, (list, tuple)):
        return ",".join(_to_text(v) for v in value)
    return str(value)


def save_param_blob(path, values) -> None:
    """Flat little-endian float64 dump of a parameter vector."""
    np.asarray(values, dtype="<f8").tofile(path)


def load_param_blob(path) -> np.ndarray:
    return np.fromfile(path, dtype="<f8").astype(float)


def save_layout(path, layout) -> None:
    """Layout manifest: one ``name dim0xdim1x...`` line per parameter block."""
    with open(path, "w", encoding="ascii") as fh:
        for name, shape in layout:
            dims = "x".join(str(d) for d in shape) if shape else "scalar"
            fh.write(f"{name} {dims}\n")


def load_layout(path):
    layout = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise DataFormatError(f"bad layout line in {path}", row=lineno)
            name, dims = parts
            shape = () if dims == "scalar" else tuple(int(d) for d in dims.split("x"))
            layout.append((name, shape))
    return layout

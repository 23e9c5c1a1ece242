"""Versioned on-disk containers shared by datasets and attribution matrices.

A stored matrix is a pair of files: ``<name>.json`` (the manifest) and
``<name>.bin`` holding the raw values as little-endian float64 in
column-major order.  Manifests carry a ``format``/``version`` pair so
readers can reject containers they do not understand.

Floats that must round-trip bit-exactly through JSON (tree thresholds,
leaf values, base scores) are encoded with :func:`float_to_hex` /
:func:`hex_to_float`.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

MATRIX_FORMAT = "dashshap-matrix"
MATRIX_VERSION = 1


def float_to_hex(x: float) -> str:
    return float(x).hex()


def hex_to_float(s: str) -> float:
    return float.fromhex(s)


def write_matrix(basepath, array, extra: dict | None = None) -> Path:
    """Write ``array`` as ``<basepath>.bin`` + ``<basepath>.json``.

    Returns the manifest path.  ``extra`` entries are stored verbatim in
    the manifest (they must be JSON-serializable).
    """
    basepath = Path(basepath)
    array = np.asarray(array, dtype=np.float64)
    if array.ndim == 1:
        array = array[:, None]
    if array.ndim != 2:
        raise ValueError(f"expected a 1-D or 2-D array, got ndim={array.ndim}")
    bin_path = basepath.with_suffix(".bin")
    manifest_path = basepath.with_suffix(".json")
    with open(bin_path, "wb") as fh:
        fh.write(np.asfortranarray(array).astype("<f8").tobytes(order="F"))
    manifest = {
        "format": MATRIX_FORMAT,
        "version": MATRIX_VERSION,
        "dtype": "<f8",
        "order": "F",
        "rows": int(array.shape[0]),
        "cols": int(array.shape[1]),
        "data_file": bin_path.name,
    }
    if extra:
        manifest.update(extra)
    write_json(manifest_path, manifest)
    return manifest_path


def read_matrix(manifest_path):
    """Read a matrix container; returns ``(array, manifest_dict)``."""
    manifest_path = Path(manifest_path)
    manifest = read_json(manifest_path)
    if manifest.get("format") != MATRIX_FORMAT:
        raise ValueError(f"not a matrix container: {manifest_path}")
    if manifest.get("version") != MATRIX_VERSION:
        raise ValueError(f"unsupported container version {manifest.get('version')}")
    bin_path = manifest_path.parent / manifest["data_file"]
    raw = np.fromfile(bin_path, dtype="<f8")
    rows, cols = manifest["rows"], manifest["cols"]
    if raw.size != rows * cols:
        raise ValueError(
            f"binary payload has {raw.size} values, manifest says {rows}x{cols}"
        )
    return raw.reshape((rows, cols), order="F"), manifest


def write_json(path, obj) -> None:
    """Deterministic JSON writer: sorted keys, fixed separators, newline EOF."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")
    os.replace(tmp, path)


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)

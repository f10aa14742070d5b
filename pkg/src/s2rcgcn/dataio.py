"""On-disk dataset bundles.

A bundle is a directory holding::

    header.json  {"height", "width", "bands", "classes", "dtype": "f32le", "class_names", ["palette"]}
    cube.bin     row-major H x W x B float32 little-endian
    labels.bin   row-major H x W uint16 little-endian, 0 = unlabeled
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .errors import DatasetError
from .preprocess import HsiCube

HEADER = "header.json"
CUBE = "cube.bin"
LABELS = "labels.bin"
DTYPES = {"f32le": "<f4"}


def atomic_write(path, data: bytes) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_dataset(cube: HsiCube, directory, palette: Optional[Sequence[Sequence[int]]] = None) -> Path:
    d = Path(directory)
    if cube.n_classes > np.iinfo(np.uint16).max:
        raise DatasetError(f"{cube.n_classes} classes do not fit 16-bit labels")
    header = {
        "height": cube.height,
        "width": cube.width,
        "bands": cube.bands,
        "classes": cube.n_classes,
        "dtype": "f32le",
        "class_names": list(cube.class_names),
    }
    if palette is not None:
        header["palette"] = [[int(c) for c in rgb] for rgb in palette]
    atomic_write(d / CUBE, np.ascontiguousarray(cube.values, dtype="<f4").tobytes())
    atomic_write(d / LABELS, np.ascontiguousarray(cube.labels, dtype="<u2").tobytes())
    atomic_write(d / HEADER, (json.dumps(header, indent=2) + "\n").encode())
    return d


def read_header(directory) -> dict:
    path = Path(directory) / HEADER
    if not path.is_file():
        raise DatasetError(f"missing {path}")
    try:
        header = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{path} is not valid JSON: {exc}") from exc
    for key in ("height", "width", "bands", "classes", "dtype", "class_names"):
        if key not in header:
            raise DatasetError(f"{path} lacks required key '{key}'")
    for key in ("height", "width", "bands", "classes"):
        if not isinstance(header[key], int) or header[key] < 1:
            raise DatasetError(f"{path}: '{key}' must be a positive integer, got {header[key]!r}")
    if header["dtype"] not in DTYPES:
        raise DatasetError(f"{path}: unknown dtype {header['dtype']!r}; supported: {sorted(DTYPES)}")
    if len(header["class_names"]) != header["classes"]:
        raise DatasetError(f"{path}: {len(header['class_names'])} class names for {header['classes']} classes")
    return header


def _read_exact(path: Path, expected: int, what: str) -> bytes:
    if not path.is_file():
        raise DatasetError(f"missing {path}")
    data = path.read_bytes()
    if len(data) != expected:
        raise DatasetError(f"{path}: size mismatch for {what}: expected {expected} bytes, found {len(data)}")
    return data


def load_dataset(directory) -> HsiCube:
    d = Path(directory)
    h = read_header(d)
    H, W, B, C = h["height"], h["width"], h["bands"], h["classes"]
    dtype = np.dtype(DTYPES[h["dtype"]])
    raw = _read_exact(d / CUBE, H * W * B * dtype.itemsize, f"{H}x{W}x{B} {h['dtype']} cube")
    values = np.frombuffer(raw, dtype=dtype).reshape(H, W, B).astype(np.float64)
    if not np.all(np.isfinite(values)):
        r, c, _ = np.argwhere(~np.isfinite(values))[0]
        raise DatasetError(f"{d / CUBE}: non-finite value at pixel ({r}, {c})")
    raw = _read_exact(d / LABELS, H * W * 2, f"{H}x{W} u16 labels")
    labels = np.frombuffer(raw, dtype="<u2").reshape(H, W).astype(np.int64)
    bad = np.argwhere(labels > C)
    if len(bad):
        r, c = bad[0]
        raise DatasetError(f"{d / LABELS}: label {labels[r, c]} at pixel ({r}, {c}) exceeds {C} classes")
    return HsiCube(values, labels, list(h["class_names"]))


def load_palette(directory) -> Optional[List[List[int]]]:
    return read_header(directory).get("palette")

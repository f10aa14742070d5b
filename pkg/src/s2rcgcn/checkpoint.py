"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    b"S2RC" | u16 version | u32 meta length | meta JSON (UTF-8)
    u32 blob count, then per blob:
        u16 name length | name (UTF-8) | u8 ndim | u32 dim * ndim | u64 byte length | f64 LE data

Blobs are prefixed ``model.``, ``adam.`` and ``pca.``. The JSON document holds
the config, shapes, epoch counter, node coordinates and the RNG state.
"""

from __future__ import annotations

import io
import json
import struct
from pathlib import Path
from typing import BinaryIO, Dict, Tuple

import numpy as np

from .dataio import atomic_write
from .errors import ConfigError, DatasetError
from .numkit.rng import restore_rng, rng_state
from .preprocess import PcaModel
from .trainer import ModelState, TrainConfig, init_state

MAGIC = b"S2RC"
VERSION = 1


def _write_blob(buf: BinaryIO, name: str, arr: np.ndarray) -> None:
    raw = name.encode()
    arr = np.asarray(arr, dtype="<f8")
    buf.write(struct.pack("<H", len(raw)) + raw)
    buf.write(struct.pack("<B", arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    data = np.ascontiguousarray(arr).tobytes()
    buf.write(struct.pack("<Q", len(data)) + data)


def _read(buf: BinaryIO, n: int, what: str) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise DatasetError(f"checkpoint truncated while reading {what}")
    return data


def _read_blob(buf: BinaryIO) -> Tuple[str, np.ndarray]:
    (n,) = struct.unpack("<H", _read(buf, 2, "blob name length"))
    name = _read(buf, n, "blob name").decode()
    (ndim,) = struct.unpack("<B", _read(buf, 1, name))
    shape = struct.unpack(f"<{ndim}I", _read(buf, 4 * ndim, name))
    (nbytes,) = struct.unpack("<Q", _read(buf, 8, name))
    if nbytes != 8 * int(np.prod(shape, dtype=np.int64)):
        raise DatasetError(f"blob {name}: {nbytes} bytes do not match shape {shape}")
    return name, np.frombuffer(_read(buf, nbytes, name), dtype="<f8").reshape(shape).astype(np.float64)


def checkpoint_bytes(state: ModelState) -> bytes:
    meta = {
        "config": state.config.to_dict(),
        "bands": state.bands,
        "n_classes": state.n_classes,
        "epoch": state.epoch,
        "class_names": state.class_names,
        "train_coords": np.asarray(state.train_coords).tolist() if state.train_coords is not None else None,
        "unlabeled_coords": np.asarray(state.unlabeled_coords).tolist() if state.unlabeled_coords is not None else None,
        "rng": rng_state(state.rng) if state.rng is not None else None,
    }
    blobs: Dict[str, np.ndarray] = {}
    blobs.update({f"model.{k}": v for k, v in state.model.state_dict().items()})
    blobs.update({f"adam.{k}": v for k, v in state.optimizer.state_dict().items()})
    if state.pca is not None:
        blobs["pca.mean"] = state.pca.mean
        blobs["pca.components"] = state.pca.components
        blobs["pca.explained_variance"] = state.pca.explained_variance
    buf = io.BytesIO()
    raw_meta = json.dumps(meta, sort_keys=True).encode()
    buf.write(MAGIC + struct.pack("<HI", VERSION, len(raw_meta)) + raw_meta)
    buf.write(struct.pack("<I", len(blobs)))
    for name, arr in blobs.items():
        _write_blob(buf, name, arr)
    return buf.getvalue()


def save_checkpoint(state: ModelState, path) -> None:
    atomic_write(Path(path), checkpoint_bytes(state))


def load_checkpoint_bytes(data: bytes) -> ModelState:
    buf = io.BytesIO(data)
    if _read(buf, 4, "magic") != MAGIC:
        raise DatasetError("not a checkpoint file (bad magic bytes)")
    version, meta_len = struct.unpack("<HI", _read(buf, 6, "header"))
    if version != VERSION:
        raise DatasetError(f"unsupported checkpoint version {version}")
    meta = json.loads(_read(buf, meta_len, "metadata").decode())
    (count,) = struct.unpack("<I", _read(buf, 4, "blob count"))
    blobs = dict(_read_blob(buf) for _ in range(count))
    if buf.read(1):
        raise DatasetError("trailing bytes after the last checkpoint blob")

    cfg = TrainConfig.from_dict(meta["config"])
    rng = restore_rng(meta["rng"]) if meta["rng"] is not None else None
    # parameters are overwritten below, so initialization randomness is irrelevant
    state = init_state(cfg, meta["bands"], meta["n_classes"], np.random.default_rng(0))
    state.rng = rng
    state.epoch = meta["epoch"]
    state.class_names = meta["class_names"]
    for key in ("train_coords", "unlabeled_coords"):
        if meta[key] is not None:
            setattr(state, key, np.asarray(meta[key], dtype=np.int64).reshape(-1, 2))
    section = lambda prefix: {k[len(prefix):]: v for k, v in blobs.items() if k.startswith(prefix)}
    try:
        state.model.load_state_dict(section("model."))
        state.optimizer.load_state_dict(section("adam."))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"checkpoint does not match its config: {exc}") from exc
    if "pca.mean" in blobs:
        state.pca = PcaModel(blobs["pca.mean"], blobs["pca.components"], blobs["pca.explained_variance"])
    return state


def load_checkpoint(path) -> ModelState:
    return load_checkpoint_bytes(Path(path).read_bytes())

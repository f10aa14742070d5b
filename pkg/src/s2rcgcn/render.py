"""Classification maps as binary PPM (P6) images."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ContractError

# first colours are hand-picked for contrast; more classes cycle through HSV
_BASE = [
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200), (245, 130, 48),
    (145, 30, 180), (70, 240, 240), (240, 50, 230), (210, 245, 60), (250, 190, 190),
    (0, 128, 128), (170, 110, 40), (128, 0, 0), (170, 255, 195), (128, 128, 0), (0, 0, 128),
]


def default_palette(n_classes: int) -> np.ndarray:
    """C x 3 uint8 colours; class c uses row c-1. None of them is black."""
    if n_classes <= len(_BASE):
        return np.array(_BASE[:n_classes], dtype=np.uint8)
    import colorsys

    extra = []
    for i in range(n_classes - len(_BASE)):
        r, g, b = colorsys.hsv_to_rgb((i * 0.618034) % 1.0, 0.65, 0.95)
        extra.append((max(1, round(r * 255)), round(g * 255), round(b * 255)))
    return np.array(_BASE + extra, dtype=np.uint8)


def render_map(labels: np.ndarray, palette: Sequence[Sequence[int]]) -> bytes:
    """PPM bytes for an H x W label map (0 = unlabeled, drawn black)."""
    lab = np.asarray(labels)
    pal = np.asarray(palette, dtype=np.int64)
    if lab.ndim != 2:
        raise ContractError(f"label map must be 2-D, got shape {lab.shape}")
    if pal.ndim != 2 or pal.shape[1] != 3 or pal.min(initial=0) < 0 or pal.max(initial=0) > 255:
        raise ContractError("palette must be C x 3 with entries in [0, 255]")
    if lab.size and (lab.min() < 0 or lab.max() > len(pal)):
        raise ContractError(f"labels must lie in [0, {len(pal)}]")
    table = np.vstack([np.zeros((1, 3), dtype=np.uint8), pal.astype(np.uint8)])
    h, w = lab.shape
    return f"P6\n{w} {h}\n255\n".encode() + table[lab].tobytes()


def parse_ppm(data: bytes) -> np.ndarray:
    """Decode a binary PPM written by :func:`render_map` into H x W x 3 uint8."""
    fields = []
    pos = 0
    while len(fields) < 4:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ContractError("truncated PPM header")
        fields.append(data[start:pos])
    if fields[0] != b"P6" or int(fields[3]) != 255:
        raise ContractError("only 8-bit binary PPM (P6) is supported")
    w, h = int(fields[1]), int(fields[2])
    payload = data[pos + 1 :]
    if len(payload) != w * h * 3:
        raise ContractError(f"PPM payload has {len(payload)} bytes, expected {w * h * 3}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)


def labels_from_rgb(rgb: np.ndarray, palette: Sequence[Sequence[int]]) -> np.ndarray:
    """Invert the palette lookup; black maps to 0. Unknown colours raise."""
    table = np.vstack([np.zeros((1, 3), dtype=np.int64), np.asarray(palette, dtype=np.int64)])
    match = np.all(rgb[:, :, None, :].astype(np.int64) == table[None, None], axis=3)
    if not match.any(axis=2).all():
        raise ContractError("image contains colours outside the palette")
    return match.argmax(axis=2)

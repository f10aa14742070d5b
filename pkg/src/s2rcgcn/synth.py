"""Seeded synthetic hyperspectral scenes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .numkit import make_rng
from .preprocess import HsiCube


@dataclass(frozen=True)
class SynthSpec:
    height: int = 64
    width: int = 64
    bands: int = 32
    classes: int = 7
    regions_per_class: int = 3
    smoothness: int = 3
    noise_sigma: float = 0.05
    mix_boundaries: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.classes}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise sigma must be >= 0, got {self.noise_sigma}")
        for name in ("height", "width", "bands", "regions_per_class", "smoothness"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.height * self.width < self.classes * self.regions_per_class:
            raise ConfigError("scene too small for the requested number of regions")


def class_signatures(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """C x B smooth curves: an offset plus ``smoothness`` low-frequency sinusoids."""
    lam = np.linspace(0.0, 1.0, spec.bands)
    sig = np.empty((spec.classes, spec.bands))
    for c in range(spec.classes):
        curve = np.full(spec.bands, rng.uniform(0.3, 0.7))
        for m in range(1, spec.smoothness + 1):
            amp = rng.uniform(0.05, 0.2)
            freq = rng.uniform(0.5, 1.0) * m
            phase = rng.uniform(0, 2 * np.pi)
            curve += amp * np.sin(2 * np.pi * freq * lam + phase)
        sig[c] = curve
    return sig


def voronoi_labels(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Nearest-site regions; each class owns ``regions_per_class`` random sites."""
    rows, cols = np.mgrid[0 : spec.height, 0 : spec.width]
    pix = np.stack([rows.reshape(-1), cols.reshape(-1)], axis=1).astype(np.float64)
    site_class = np.repeat(np.arange(1, spec.classes + 1), spec.regions_per_class)
    for _ in range(100):
        sites = rng.uniform(0, 1, size=(len(site_class), 2)) * [spec.height, spec.width]
        d2 = ((pix[:, None, :] - sites[None, :, :]) ** 2).sum(axis=2)
        labels = site_class[d2.argmin(axis=1)].reshape(spec.height, spec.width)
        if len(np.unique(labels)) == spec.classes:
            return labels
    raise ConfigError("could not place a region for every class; enlarge the scene")


def boundary_mask(labels: np.ndarray) -> np.ndarray:
    edge = np.zeros(labels.shape, dtype=bool)
    edge[1:, :] |= labels[1:, :] != labels[:-1, :]
    edge[:-1, :] |= labels[:-1, :] != labels[1:, :]
    edge[:, 1:] |= labels[:, 1:] != labels[:, :-1]
    edge[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    return edge


def generate_synthetic(spec: SynthSpec) -> HsiCube:
    rng = make_rng(spec.seed)
    labels = voronoi_labels(spec, rng)
    sig = class_signatures(spec, rng)
    values = sig[labels - 1]
    if spec.mix_boundaries:
        edge = boundary_mask(labels)
        h, w = labels.shape
        for r, c in np.argwhere(edge):
            others = [
                labels[rr, cc]
                for rr, cc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1))
                if 0 <= rr < h and 0 <= cc < w and labels[rr, cc] != labels[r, c]
            ]
            other = others[int(rng.integers(len(others)))]
            alpha = rng.uniform(0.5, 1.0)
            values[r, c] = alpha * sig[labels[r, c] - 1] + (1 - alpha) * sig[other - 1]
    if spec.noise_sigma > 0:
        values = values + rng.normal(0.0, spec.noise_sigma, size=values.shape)
    names = [f"class_{c}" for c in range(1, spec.classes + 1)]
    return HsiCube(values, labels, names)

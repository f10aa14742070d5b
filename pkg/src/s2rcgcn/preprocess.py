"""From a raw hyperspectral cube to per-node spectral vectors and patches."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .errors import ContractError


@dataclass
class HsiCube:
    """An H x W x B scene with per-pixel labels in [0, C] (0 = unlabeled)."""

    values: np.ndarray
    labels: np.ndarray
    class_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.values.ndim != 3:
            raise ContractError(f"cube values must be H x W x B, got shape {self.values.shape}")
        if self.labels.shape != self.values.shape[:2]:
            raise ContractError(f"labels shape {self.labels.shape} does not match cube {self.values.shape[:2]}")
        if not self.class_names:
            top = int(self.labels.max()) if self.labels.size else 0
            self.class_names = [f"class_{c}" for c in range(1, top + 1)]
        if not np.isfinite(self.values).all():
            raise ContractError("cube contains non-finite values")
        bad = (self.labels < 0) | (self.labels > self.n_classes)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise ContractError(f"label {self.labels[r, c]} at pixel ({r}, {c}) outside [0, {self.n_classes}]")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def labeled_coords(self) -> np.ndarray:
        return np.argwhere(self.labels > 0)


def normalize_bands(cube: HsiCube) -> HsiCube:
    """Min-max scale each band to [0, 1]; constant bands become 0."""
    v = cube.values
    lo = v.min(axis=(0, 1), keepdims=True)
    span = v.max(axis=(0, 1), keepdims=True) - lo
    safe = np.where(span > 0, span, 1.0)
    scaled = np.where(span > 0, (v - lo) / safe, 0.0)
    return HsiCube(scaled, cube.labels.copy(), list(cube.class_names))


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # p x B, orthonormal rows
    explained_variance: np.ndarray

    @property
    def n_components(self) -> int:
        return self.components.shape[0]

    def transform(self, pixels: np.ndarray) -> np.ndarray:
        return (pixels - self.mean) @ self.components.T

    def inverse_transform(self, scores: np.ndarray) -> np.ndarray:
        return scores @ self.components + self.mean


def fit_pca(pixels: np.ndarray, p: int) -> PcaModel:
    """Top-``p`` principal axes of ``pixels`` (N x B).

    Uses the symmetric eigendecomposition of the sample covariance. Each
    component is signed so that its largest-magnitude entry is positive.
    """
    x = np.asarray(pixels, dtype=np.float64)
    n, b = x.shape
    if not 1 <= p <= min(n, b):
        raise ContractError(f"PCA dimension p={p} must lie in [1, {min(n, b)}]")
    mean = x.mean(axis=0)
    centered = x - mean
    cov = centered.T @ centered / max(n - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:p]
    comps = evecs[:, order].T.copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return PcaModel(mean=mean, components=comps, explained_variance=np.clip(evals[order], 0.0, None))


@dataclass
class SampleBatch:
    """Per-node inputs: spectra ``X_b`` (N x d), patches ``X_p`` (N x p x w x w)."""

    X_b: np.ndarray
    X_p: np.ndarray
    y: np.ndarray
    coords: np.ndarray

    def __post_init__(self):
        n = self.X_b.shape[0]
        if not (self.X_p.shape[0] == n == len(self.y) == len(self.coords)):
            raise ContractError("X_b, X_p, y and coords must have the same number of rows")

    def __len__(self) -> int:
        return self.X_b.shape[0]

    def subset(self, index) -> "SampleBatch":
        idx = np.asarray(index, dtype=np.intp)
        return SampleBatch(self.X_b[idx], self.X_p[idx], self.y[idx], self.coords[idx])

    @staticmethod
    def concat(parts: List["SampleBatch"]) -> "SampleBatch":
        return SampleBatch(
            np.concatenate([b.X_b for b in parts]),
            np.concatenate([b.X_p for b in parts]),
            np.concatenate([b.y for b in parts]),
            np.concatenate([b.coords for b in parts]),
        )


def project_cube(cube: HsiCube, pca: PcaModel) -> np.ndarray:
    """PCA scores for every pixel, as an H x W x p array."""
    flat = cube.values.reshape(-1, cube.bands)
    return pca.transform(flat).reshape(cube.height, cube.width, pca.n_components)


def extract_patches(cube: HsiCube, pca: PcaModel, coords, w: int, hide_labels: bool = False) -> SampleBatch:
    """Spectra and mirror-padded w x w PCA patches centred on ``coords``.

    ``cube`` is expected to be band-normalized already. With ``hide_labels``
    every node gets label 0.
    """
    if w < 1 or w % 2 == 0:
        raise ContractError(f"patch side w must be odd and positive, got {w}")
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    if coords.size and (
        (coords[:, 0] < 0).any()
        or (coords[:, 0] >= cube.height).any()
        or (coords[:, 1] < 0).any()
        or (coords[:, 1] >= cube.width).any()
    ):
        raise ContractError(f"coordinate outside the {cube.height} x {cube.width} cube")
    r = w // 2
    scores = project_cube(cube, pca)
    padded = np.pad(scores, ((r, r), (r, r), (0, 0)), mode="reflect")
    n = len(coords)
    patches = np.empty((n, pca.n_components, w, w))
    for i, (row, col) in enumerate(coords):
        patches[i] = padded[row : row + w, col : col + w].transpose(2, 0, 1)
    spectra = cube.values[coords[:, 0], coords[:, 1]] if n else np.empty((0, cube.bands))
    labels = np.zeros(n, dtype=np.int64) if hide_labels else cube.labels[coords[:, 0], coords[:, 1]]
    return SampleBatch(spectra.copy(), patches, labels, coords)


def split_samples(cube: HsiCube, per_class: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Draw ``per_class`` training pixels per class; the rest of the labeled pixels are test."""
    train = []
    for c in range(1, cube.n_classes + 1):
        pool = np.argwhere(cube.labels == c)
        if len(pool) < per_class:
            raise ContractError(
                f"class {c} ({cube.class_names[c - 1]}) has {len(pool)} labeled pixels, fewer than per_class={per_class}"
            )
        pick = np.sort(rng.choice(len(pool), size=per_class, replace=False))
        train.append(pool[pick])
    train_coords = np.concatenate(train) if train else np.empty((0, 2), dtype=np.int64)
    taken = np.zeros(cube.labels.shape, dtype=bool)
    taken[train_coords[:, 0], train_coords[:, 1]] = True
    test_coords = np.argwhere((cube.labels > 0) & ~taken)
    return train_coords, test_coords

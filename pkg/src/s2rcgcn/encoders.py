"""Spectral (1-D CNN) and spatial (2-D SE-ResNet) encoders and their fusion."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import ConfigError, ContractError
from .numkit import Affine, BatchNorm, Conv1d, Conv2d, Module, Tensor, ops


@dataclass(frozen=True)
class EncoderConfig:
    bands: int
    pca_dim: int
    patch: int
    l_b: int = 64
    l_p: int = 64
    spectral_channels: Tuple[int, int] = (16, 32)
    spectral_kernels: Tuple[int, int] = (7, 5)
    stem_channels: int = 32
    block_channels: Tuple[int, int] = (32, 64)
    se_reduction: int = 8
    use_se: bool = True

    def __post_init__(self):
        for name in ("bands", "pca_dim", "patch", "l_b", "l_p", "se_reduction", "stem_channels"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.bands < self.spectral_kernels[0]:
            raise ConfigError(f"spectral length {self.bands} is smaller than the first kernel {self.spectral_kernels[0]}")
        if self.patch < 3 or self.patch % 2 == 0:
            raise ConfigError(f"patch side must be odd and >= 3 for the stride-2 stage, got {self.patch}")
        if self.use_se:
            for c in self.block_channels:
                if c % self.se_reduction:
                    raise ConfigError(f"SE reduction {self.se_reduction} does not divide {c} channels")

    @property
    def joint_dim(self) -> int:
        return self.l_b + self.l_p

    @property
    def spatial_out_side(self) -> int:
        return (self.patch - 1) // 2 + 1


class SEBlock(Module):
    """Squeeze (global average) then excite (C -> C/r -> C, sigmoid gate)."""

    def __init__(self, channels: int, reduction: int, rng: np.random.Generator):
        if channels % reduction:
            raise ConfigError(f"SE reduction {reduction} does not divide {channels} channels")
        self.fc1 = Affine(channels, channels // reduction, rng)
        self.fc2 = Affine(channels // reduction, channels, rng)

    def gate(self, x: Tensor) -> Tensor:
        squeezed = ops.global_avg_pool(x)
        return ops.sigmoid(self.fc2(ops.relu(self.fc1(squeezed))))

    def __call__(self, x: Tensor) -> Tensor:
        return ops.scale_channels(x, self.gate(x))


def se_block(x: Tensor, block: SEBlock) -> Tensor:
    return block(x)


class ResidualBlock(Module):
    """conv-BN-ReLU-conv-BN[-SE] plus a skip path, then ReLU.

    The skip is the identity when shapes agree, otherwise a biased 1x1
    convolution with the block's stride.
    """

    def __init__(self, c_in, c_out, stride, rng, use_se=True, reduction=8):
        self.conv1 = Conv2d(c_in, c_out, 3, rng, stride=stride, padding=1)
        self.bn1 = BatchNorm(c_out)
        self.conv2 = Conv2d(c_out, c_out, 3, rng, padding=1)
        self.bn2 = BatchNorm(c_out)
        self.se = SEBlock(c_out, reduction, rng) if use_se else None
        self.skip = Conv2d(c_in, c_out, 1, rng, stride=stride, bias=True) if (c_in != c_out or stride != 1) else None

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        h = ops.relu(self.bn1(self.conv1(x), training))
        h = self.bn2(self.conv2(h), training)
        if self.se is not None:
            h = self.se(h)
        s = x if self.skip is None else self.skip(x)
        return ops.relu(ops.add(h, s))


class SpectralEncoder(Module):
    """conv(k7)-BN-ReLU-maxpool(2)-conv(k5)-BN-ReLU-GAP-affine, same padding."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        c1, c2 = cfg.spectral_channels
        k1, k2 = cfg.spectral_kernels
        self.conv1 = Conv1d(1, c1, k1, rng, padding=k1 // 2)
        self.bn1 = BatchNorm(c1)
        self.conv2 = Conv1d(c1, c2, k2, rng, padding=k2 // 2)
        self.bn2 = BatchNorm(c2)
        self.fc = Affine(c2, cfg.l_b, rng)
        self._bands = cfg.bands

    def __call__(self, x_b, training: bool) -> Tensor:
        x = x_b if isinstance(x_b, Tensor) else Tensor(np.asarray(x_b)[:, None, :])
        if x.ndim != 3 or x.shape[1] != 1 or x.shape[2] != self._bands:
            raise ContractError(f"spectral input must be N x 1 x {self._bands}, got {x.shape}")
        h = ops.relu(self.bn1(self.conv1(x), training))
        h = ops.max_pool1d(h, 2, 2)
        h = ops.relu(self.bn2(self.conv2(h), training))
        return self.fc(ops.global_avg_pool(h))


class SpatialEncoder(Module):
    """Stem conv, an SE-residual block, a strided SE-residual block, flatten, affine."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        c0 = cfg.stem_channels
        c1, c2 = cfg.block_channels
        self.stem = Conv2d(cfg.pca_dim, c0, 3, rng, padding=1)
        self.stem_bn = BatchNorm(c0)
        self.blocks = [
            ResidualBlock(c0, c1, 1, rng, cfg.use_se, cfg.se_reduction),
            ResidualBlock(c1, c2, 2, rng, cfg.use_se, cfg.se_reduction),
        ]
        side = cfg.spatial_out_side
        self.fc = Affine(c2 * side * side, cfg.l_p, rng)
        self._in_shape = (cfg.pca_dim, cfg.patch, cfg.patch)

    def __call__(self, x_p, training: bool) -> Tensor:
        x = x_p if isinstance(x_p, Tensor) else Tensor(x_p)
        if x.shape[1:] != self._in_shape:
            raise ContractError(f"spatial input must be N x {self._in_shape}, got {x.shape}")
        h = ops.relu(self.stem_bn(self.stem(x), training))
        for block in self.blocks:
            h = block(h, training)
        return self.fc(ops.flatten(h))


def fuse(z_b: Tensor, z_p: Tensor) -> Tensor:
    """Joint feature: columns ``[Z_p | Z_b]``."""
    if z_b.shape[0] != z_p.shape[0]:
        raise ContractError(f"cannot fuse {z_p.shape[0]} spatial rows with {z_b.shape[0]} spectral rows")
    return ops.concat_cols([z_p, z_b])


def split_joint(z_j: np.ndarray, l_p: int) -> Tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`fuse` on raw arrays: returns ``(Z_b, Z_p)``."""
    return z_j[:, l_p:], z_j[:, :l_p]

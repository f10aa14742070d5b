"""Parameter containers for the primitive layers."""

from __future__ import annotations

from typing import Dict, Iterator, List, Tuple

import numpy as np

from . import ops
from .tensor import Tensor


class Module:
    """Minimal parameter tree.

    Parameters are ``Tensor`` attributes with ``requires_grad=True``; buffers
    are plain ``np.ndarray`` attributes (e.g. batch-norm running statistics).
    Child modules may be attributes or items of list attributes. Names follow
    attribute insertion order, so they are stable for a fixed architecture.
    """

    def _children(self) -> Iterator[Tuple[str, object]]:
        for key, value in vars(self).items():
            if key.startswith("_"):
                continue
            if isinstance(value, list):
                for i, item in enumerate(value):
                    yield f"{key}.{i}", item
            else:
                yield key, value

    def named_parameters(self, prefix: str = "") -> List[Tuple[str, Tensor]]:
        out = []
        for key, value in self._children():
            if isinstance(value, Tensor) and value.requires_grad:
                out.append((prefix + key, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(prefix + key + "."))
        return out

    def named_buffers(self, prefix: str = "") -> List[Tuple[str, np.ndarray]]:
        out = []
        for key, value in self._children():
            if isinstance(value, np.ndarray):
                out.append((prefix + key, value))
            elif isinstance(value, Module):
                out.extend(value.named_buffers(prefix + key + "."))
        return out

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        targets = {name: p.data for name, p in self.named_parameters()}
        targets.update(dict(self.named_buffers()))
        missing = sorted(set(targets) - set(state))
        if missing:
            raise KeyError(f"state is missing entries: {missing[:5]}")
        for name, arr in targets.items():
            src = np.asarray(state[name], dtype=np.float64)
            if src.shape != arr.shape:
                raise ValueError(f"{name}: expected shape {arr.shape}, got {src.shape}")
            arr[...] = src


def kaiming_uniform(shape, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Affine(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Tensor(kaiming_uniform((n_in, n_out), n_in, rng), requires_grad=True)
        self.bias = Tensor(np.zeros(n_out), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ops.matmul(x, self.weight)
        return out if self.bias is None else ops.add_bias(out, self.bias)


class Conv1d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=0, bias=False):
        self.weight = Tensor(kaiming_uniform((c_out, c_in, k), c_in * k, rng), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv1d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=0, bias=False):
        self.weight = Tensor(kaiming_uniform((c_out, c_in, k, k), c_in * k * k, rng), requires_grad=True)
        self.bias = Tensor(np.zeros(c_out), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class BatchNorm(Module):
    """Learnable scale/shift plus running statistics (eps 1e-5, momentum 0.1)."""

    def __init__(self, n_features: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Tensor(np.ones(n_features), requires_grad=True)
        self.beta = Tensor(np.zeros(n_features), requires_grad=True)
        self.running_mean = np.zeros(n_features)
        self.running_var = np.ones(n_features)
        self._eps = eps
        self._momentum = momentum

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ops.batch_norm(
            x,
            self.gamma,
            self.beta,
            self.running_mean,
            self.running_var,
            training,
            eps=self._eps,
            momentum=self._momentum,
        )


"""Dense float64 tensors with reverse-mode differentiation.

Every primitive builds its output through :func:`make_result`, which checks
finiteness and records a closure mapping the output gradient to one gradient
per parent. :meth:`Tensor.backward` walks the recorded graph once in reverse
topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Dict, Iterator, Optional, Sequence, Tuple

import numpy as np

from ..errors import GradientError, NonFiniteError

_GRAD_ENABLED = True

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A row-major float64 array that may participate in autodiff.

    Leaves are tensors created directly by the user; ``requires_grad=True``
    marks them as parameters. Non-leaf tensors keep references to their
    parents and a backward closure until :meth:`backward` consumes them.
    """

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"tensor {name or '<unnamed>'} contains non-finite values")
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: Tuple[Tensor, ...] = ()
        self._backward: Optional[BackwardFn] = None
        self._op = ""
        self._consumed = False

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        op = f", op={self._op}" if self._op else ""
        return f"Tensor(shape={self.shape}{op}, requires_grad={self.requires_grad})"

    # operator sugar; the primitives live in ops.py
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __mul__(self, other):
        from . import ops

        if isinstance(other, Tensor):
            return ops.mul(self, other)
        return ops.scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops

        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def backward(self, inputs: Optional[Sequence["Tensor"]] = None) -> Dict["Tensor", np.ndarray]:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        Returns a map from each reachable leaf that requires grad to the
        gradient contributed by this call; leaves listed in ``inputs`` that
        the loss does not depend on map to zeros. A graph can be consumed
        only once.
        """
        if self.data.size != 1:
            raise GradientError(f"backward needs a scalar loss, got shape {self.shape}")
        if self._consumed:
            raise GradientError("backward already called on this graph; rebuild the forward pass")
        order = _topological_order(self)
        grads: Dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        leaf_grads: Dict[Tensor, np.ndarray] = {}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node._backward is None:
                if node.requires_grad:
                    if g is None:
                        g = np.zeros_like(node.data)
                    leaf_grads[node] = g
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if g is not None:
                parent_grads = node._backward(g)
                for parent, pg in zip(node._parents, parent_grads):
                    if pg is None or not parent.requires_grad:
                        continue
                    key = id(parent)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
            node._consumed = True
            node._backward = _spent
            node._parents = ()
        self._consumed = True
        for leaf in inputs or ():
            if leaf not in leaf_grads:
                leaf_grads[leaf] = np.zeros_like(leaf.data)
        return leaf_grads


def _spent(g):
    raise GradientError("graph node already consumed by backward")


def _topological_order(root: Tensor) -> list:
    order: list = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in reversed(node._parents):
            if id(parent) not in seen and parent.requires_grad:
                stack.append((parent, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def make_result(data: np.ndarray, parents: Sequence[Tensor], backward: BackwardFn, op: str) -> Tensor:
    """Wrap a primitive's output and, if needed, record its backward rule."""
    if not np.isfinite(data).all():
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.name = ""
    out._op = op
    out._consumed = False
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out._parents = tuple(parents) if needs else ()
    out._backward = backward if needs else None
    return out

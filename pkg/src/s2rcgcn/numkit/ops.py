"""Differentiable primitives.

Broadcasting is limited to the bias and per-channel patterns the model needs:
``add_bias`` (trailing feature axis), ``scale_channels`` (axis 1 of an
``N x C x ...`` array) and scalar scaling. Everything else demands equal shapes.
Convolutions are cross-correlations (no kernel flip).
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError, ShapeError
from .tensor import Tensor, make_result


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------- elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "add")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "sub")
    return make_result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _same_shape(a, b, "mul")
    return make_result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def scale(a: Tensor, c: float) -> Tensor:
    return make_result(a.data * c, (a,), lambda g: (g * c,), "scale")


def add_bias(x: Tensor, bias: Tensor) -> Tensor:
    """``x + bias`` with ``bias`` broadcast along all leading axes."""
    if bias.ndim != 1 or x.shape[-1] != bias.shape[0]:
        raise ShapeError(f"add_bias: bias {bias.shape} does not match trailing axis of {x.shape}")
    axes = tuple(range(x.ndim - 1))
    return make_result(x.data + bias.data, (x, bias), lambda g: (g, g.sum(axis=axes)), "add_bias")


def scale_channels(x: Tensor, gate: Tensor) -> Tensor:
    """Multiply each channel map of ``x`` (N x C x ...) by ``gate`` (N x C)."""
    if gate.shape != x.shape[:2]:
        raise ShapeError(f"scale_channels: gate {gate.shape} vs input {x.shape}")
    expand = gate.data.reshape(gate.shape + (1,) * (x.ndim - 2))
    spatial = tuple(range(2, x.ndim))

    def backward(g):
        return g * expand, (g * x.data).sum(axis=spatial)

    return make_result(x.data * expand, (x, gate), backward, "scale_channels")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    d = x.data
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return make_result(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    return make_result(out, (x,), lambda g: (g * out,), "exp")


def log(x: Tensor) -> Tensor:
    if (x.data <= 0).any():
        raise ContractError("log of non-positive value")
    return make_result(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


# ---------------------------------------------------------------- reductions / shape


def sum(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    return make_result(np.array(x.data.sum()), (x,), lambda g: (np.full(x.shape, float(g)),), "sum")


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return make_result(np.array(x.data.mean()), (x,), lambda g: (np.full(x.shape, float(g) / n),), "mean")


def weighted_sum(x: Tensor, weights: np.ndarray) -> Tensor:
    """``sum(x * weights)`` for a constant weight array."""
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != x.shape:
        raise ShapeError(f"weighted_sum: weights {w.shape} vs input {x.shape}")
    return make_result(np.array((x.data * w).sum()), (x,), lambda g: (float(g) * w,), "weighted_sum")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    old = x.shape
    return make_result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got {x.shape}")
    return make_result(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


def flatten(x: Tensor) -> Tensor:
    """Collapse every axis after the first."""
    return reshape(x, (x.shape[0], -1))


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along axis 1, in the given order."""
    rows = {p.shape[0] for p in parts}
    if len(rows) != 1 or any(p.ndim != 2 for p in parts):
        raise ShapeError(f"concat_cols: incompatible shapes {[p.shape for p in parts]}")
    widths = [p.shape[1] for p in parts]
    edges = np.cumsum([0] + widths)

    def backward(g):
        return tuple(g[:, edges[i] : edges[i + 1]] for i in range(len(parts)))

    return make_result(np.concatenate([p.data for p in parts], axis=1), tuple(parts), backward, "concat_cols")


def take_rows(x: Tensor, index) -> Tensor:
    idx = np.asarray(index, dtype=np.intp)

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, idx, g)
        return (out,)

    return make_result(x.data[idx], (x,), backward, "take_rows")


def take_cols(x: Tensor, index) -> Tensor:
    idx = np.asarray(index, dtype=np.intp)

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, (slice(None), idx), g)
        return (out,)

    return make_result(x.data[:, idx], (x,), backward, "take_cols")


def pick(x: Tensor, rows, cols) -> Tensor:
    """Gather ``x[rows[i], cols[i]]`` into a vector."""
    r = np.asarray(rows, dtype=np.intp)
    c = np.asarray(cols, dtype=np.intp)

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, (r, c), g)
        return (out,)

    return make_result(x.data[r, c], (x,), backward, "pick")


# ---------------------------------------------------------------- linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return make_result(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def spmm(adj, x: Tensor) -> Tensor:
    """Constant sparse (or dense) matrix times a 2-D tensor."""
    if adj.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm: cannot multiply {adj.shape} by {x.shape}")
    adj_t = adj.T
    out = np.asarray(adj @ x.data)
    return make_result(out, (x,), lambda g: (np.asarray(adj_t @ g),), "spmm")


def l2_normalize_rows(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise ShapeError(f"l2_normalize_rows expects a matrix, got {x.shape}")
    norms = np.sqrt((x.data**2).sum(axis=1, keepdims=True))
    if (norms == 0).any():
        bad = int(np.flatnonzero(norms[:, 0] == 0)[0])
        raise ContractError(f"row {bad} has zero norm; cosine similarity undefined")
    u = x.data / norms

    def backward(g):
        return ((g - u * (g * u).sum(axis=1, keepdims=True)) / norms,)

    return make_result(u, (x,), backward, "l2_normalize_rows")


# ---------------------------------------------------------------- softmax family


def _row_lse(d: np.ndarray) -> np.ndarray:
    m = d.max(axis=1, keepdims=True)
    return m + np.log(np.exp(d - m).sum(axis=1, keepdims=True))


def softmax_rows(x: Tensor) -> Tensor:
    d = x.data
    e = np.exp(d - d.max(axis=1, keepdims=True))
    s = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return make_result(s, (x,), backward, "softmax_rows")


def log_softmax_rows(x: Tensor) -> Tensor:
    out = x.data - _row_lse(x.data)
    s = np.exp(out)

    def backward(g):
        return (g - s * g.sum(axis=1, keepdims=True),)

    return make_result(out, (x,), backward, "log_softmax_rows")


def logsumexp_rows(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Row-wise ``log(sum(exp(x)))``, restricted to ``mask`` entries if given.

    Every row must keep at least one entry.
    """
    d = x.data
    if mask is None:
        m = np.ones(d.shape, dtype=bool)
    else:
        m = np.asarray(mask, dtype=bool)
        if m.shape != d.shape:
            raise ShapeError(f"logsumexp_rows: mask {m.shape} vs input {d.shape}")
    if not m.any(axis=1).all():
        raise ContractError("logsumexp_rows: a row has no unmasked entries")
    masked = np.where(m, d, -np.inf)
    mx = masked.max(axis=1, keepdims=True)
    e = np.where(m, np.exp(masked - mx), 0.0)
    tot = e.sum(axis=1, keepdims=True)
    out = (mx + np.log(tot))[:, 0]
    w = e / tot

    def backward(g):
        return (w * g[:, None],)

    return make_result(out, (x,), backward, "logsumexp_rows")


# ---------------------------------------------------------------- convolution


def _check_conv(x_len: int, k: int, padding: int, stride: int, op: str) -> int:
    if stride < 1 or padding < 0:
        raise ContractError(f"{op}: stride must be >= 1 and padding >= 0")
    if k > x_len + 2 * padding:
        raise ShapeError(f"{op}: kernel size {k} exceeds padded input length {x_len + 2 * padding}")
    return (x_len + 2 * padding - k) // stride + 1


def conv1d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate ``x`` (N x C_in x L) with ``kernel`` (C_out x C_in x K)."""
    if x.ndim != 3 or kernel.ndim != 3 or x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"conv1d: input {x.shape} incompatible with kernel {kernel.shape}")
    n, c_in, length = x.shape
    c_out, _, k = kernel.shape
    l_out = _check_conv(length, k, padding, stride, "conv1d")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding)))
    # (N, C_in, L_out, K) -> (N, L_out, C_in, K)
    win = sliding_window_view(xp, k, axis=2)[:, :, ::stride][:, :, :l_out]
    cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(n * l_out, c_in * k)
    wmat = kernel.data.reshape(c_out, c_in * k)
    out = (cols @ wmat.T).reshape(n, l_out, c_out).transpose(0, 2, 1)
    if bias is not None:
        out = out + bias.data[None, :, None]
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        gm = g.transpose(0, 2, 1).reshape(n * l_out, c_out)
        dk = (gm.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (gm @ wmat).reshape(n, l_out, c_in, k)
            dxp = np.zeros_like(xp)
            for j in range(k):
                dxp[:, :, j : j + stride * (l_out - 1) + 1 : stride] += dcols[:, :, :, j].transpose(0, 2, 1)
            dx = dxp[:, :, padding : padding + length]
        if bias is None:
            return dx, dk
        return dx, dk, g.sum(axis=(0, 2))

    return make_result(np.ascontiguousarray(out), parents, backward, "conv1d")


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlate ``x`` (N x C_in x H x W) with ``kernel`` (C_out x C_in x K x K)."""
    if x.ndim != 4 or kernel.ndim != 4 or x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {kernel.shape}")
    n, c_in, h, w = x.shape
    c_out, _, kh, kw = kernel.shape
    h_out = _check_conv(h, kh, padding, stride, "conv2d")
    w_out = _check_conv(w, kw, padding, stride, "conv2d")
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :h_out, :w_out]
    # (N, C_in, H', W', kh, kw) -> (N, H', W', C_in, kh, kw)
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h_out * w_out, c_in * kh * kw)
    wmat = kernel.data.reshape(c_out, -1)
    out = (cols @ wmat.T).reshape(n, h_out, w_out, c_out).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def backward(g):
        gm = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        dk = (gm.T @ cols).reshape(kernel.shape) if kernel.requires_grad else None
        dx = None
        if x.requires_grad:
            dcols = (gm @ wmat).reshape(n, h_out, w_out, c_in, kh, kw).transpose(0, 3, 1, 2, 4, 5)
            dxp = np.zeros_like(xp)
            he = stride * (h_out - 1) + 1
            we = stride * (w_out - 1) + 1
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i : i + he : stride, j : j + we : stride] += dcols[..., i, j]
            dx = dxp[:, :, padding : padding + h, padding : padding + w]
        if bias is None:
            return dx, dk
        return dx, dk, g.sum(axis=(0, 2, 3))

    return make_result(np.ascontiguousarray(out), parents, backward, "conv2d")


# ---------------------------------------------------------------- pooling


def max_pool1d(x: Tensor, window: int, stride: Optional[int] = None) -> Tensor:
    """Max over sliding windows of the last axis; ties route to the lowest index."""
    stride = stride or window
    n, c, length = x.shape
    l_out = _check_conv(length, window, 0, stride, "max_pool1d")
    win = sliding_window_view(x.data, window, axis=2)[:, :, ::stride][:, :, :l_out]
    arg = win.argmax(axis=3)
    out = np.take_along_axis(win, arg[..., None], axis=3)[..., 0]
    src = arg + np.arange(l_out)[None, None, :] * stride

    def backward(g):
        dx = np.zeros_like(x.data)
        ni, ci, _ = np.indices(arg.shape)
        np.add.at(dx, (ni, ci, src), g)
        return (dx,)

    return make_result(np.ascontiguousarray(out), (x,), backward, "max_pool1d")


def max_pool2d(x: Tensor, window: int, stride: Optional[int] = None) -> Tensor:
    """2-D max pooling; ties route to the lowest row-major index in the window."""
    stride = stride or window
    n, c, h, w = x.shape
    h_out = _check_conv(h, window, 0, stride, "max_pool2d")
    w_out = _check_conv(w, window, 0, stride, "max_pool2d")
    win = sliding_window_view(x.data, (window, window), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :h_out, :w_out]
    flat = win.reshape(n, c, h_out, w_out, window * window)
    arg = flat.argmax(axis=4)
    out = np.take_along_axis(flat, arg[..., None], axis=4)[..., 0]
    rows = arg // window + np.arange(h_out)[None, None, :, None] * stride
    cols = arg % window + np.arange(w_out)[None, None, None, :] * stride

    def backward(g):
        dx = np.zeros_like(x.data)
        ni, ci, _, _ = np.indices(arg.shape)
        np.add.at(dx, (ni, ci, rows, cols), g)
        return (dx,)

    return make_result(np.ascontiguousarray(out), (x,), backward, "max_pool2d")


def global_avg_pool(x: Tensor) -> Tensor:
    """Average every channel map of ``x`` (N x C x ...) down to N x C."""
    if x.ndim < 3:
        raise ShapeError(f"global_avg_pool needs N x C x ... input, got {x.shape}")
    spatial = tuple(range(2, x.ndim))
    count = int(np.prod(x.shape[2:]))

    def backward(g):
        return (np.broadcast_to(g.reshape(g.shape + (1,) * len(spatial)) / count, x.shape).copy(),)

    return make_result(x.data.mean(axis=spatial), (x,), backward, "global_avg_pool")


# ---------------------------------------------------------------- normalization


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Per-feature normalization over every axis except axis 1.

    Works for N x F, N x C x L and N x C x H x W inputs. In training mode the
    batch statistics are used and ``running_mean``/``running_var`` are updated
    in place (unbiased variance for the running estimate).
    """
    if x.ndim < 2 or gamma.shape != (x.shape[1],) or beta.shape != (x.shape[1],):
        raise ShapeError(f"batch_norm: input {x.shape} vs scale {gamma.shape} / shift {beta.shape}")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, x.shape[1]) + (1,) * (x.ndim - 2)
    m = x.data.size // x.shape[1]
    if training:
        if x.shape[0] < 2:
            raise ContractError("batch_norm in training mode needs at least 2 samples")
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * m / max(m - 1, 1)
    else:
        mu = running_mean.copy()
        var = running_var.copy()
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(bshape)) * inv.reshape(bshape)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma.data.reshape(bshape)
        if training:
            dx = (
                inv.reshape(bshape)
                / m
                * (m * dxhat - dxhat.sum(axis=axes).reshape(bshape) - xhat * (dxhat * xhat).sum(axis=axes).reshape(bshape))
            )
        else:
            dx = dxhat * inv.reshape(bshape)
        return dx, dgamma, dbeta

    return make_result(out, (x, gamma, beta), backward, "batch_norm")


"""Differentiable tensor operations.

Binary elementwise ops accept two tensors of identical shape, or a tensor and
a Python scalar. Bias broadcasting happens only inside ``linear``, ``conv2d``
and ``batch_norm``; anything else needs an explicit reshape.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ConfigError, DataError, DimensionError
from .tensor import Tensor, record

Number = (int, float, np.floating, np.integer)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ (no implicit broadcasting)")


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b) -> Tensor:
    if isinstance(b, Number):
        return record(a.data + a.data.dtype.type(b), (a,), lambda g: (g,), "add")
    _same_shape(a, b, "add")
    return record(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, Number):
        return record(a.data - a.data.dtype.type(b), (a,), lambda g: (g,), "sub")
    _same_shape(a, b, "sub")
    return record(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def neg(a: Tensor) -> Tensor:
    return record(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a: Tensor, b) -> Tensor:
    if isinstance(b, Number):
        c = a.data.dtype.type(b)
        return record(a.data * c, (a,), lambda g: (g * c,), "mul")
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return record(ad * bd, (a, b), lambda g: (g * bd, g * ad), "mul")


def div(a: Tensor, b) -> Tensor:
    if isinstance(b, Number):
        c = a.data.dtype.type(b)
        return record(a.data / c, (a,), lambda g: (g / c,), "div")
    _same_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return record(out, (a, b), lambda g: (g / bd, -g * out / bd), "div")


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data
    e = ad.dtype.type(exponent)
    return record(ad ** e, (a,), lambda g: (g * e * ad ** (e - 1),), "pow")


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return record(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    ad = a.data
    return record(np.log(ad), (a,), lambda g: (g / ad,), "log")


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return record(out, (a,), lambda g: (g * out * (1 - out),), "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return record(out, (a,), lambda g: (g * (1 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    # subgradient at 0 is 0
    mask = a.data > 0
    return record(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def minimum(a: Tensor, c: float) -> Tensor:
    mask = a.data < c
    out = np.where(mask, a.data, a.data.dtype.type(c))
    return record(out, (a,), lambda g: (g * mask,), "minimum")


# ---------------------------------------------------------------- shape ops

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    src = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return record(out, (a,), lambda g: (g.reshape(src),), "reshape")


def getitem(a: Tensor, index) -> Tensor:
    src_shape, dtype = a.shape, a.dtype

    def bw(g):
        full = np.zeros(src_shape, dtype=dtype)
        np.add.at(full, index, g)
        return (full,)

    return record(np.array(a.data[index]), (a,), bw, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record(out, tensors, bw, "concat")


def tsum(a: Tensor, axis=None) -> Tensor:
    src = a.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, src).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return record(np.asarray(a.data.sum(axis=axis)), (a,), bw, "sum")


def mean(a: Tensor, axis=None) -> Tensor:
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(tsum(a, axis), 1.0 / float(count))


# ---------------------------------------------------------------- dense layers

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data
    return record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g), "matmul")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``y = x W^T + b`` with ``W`` shaped ``[Cout, Cin]``."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} vs weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias {bias.shape} vs weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data

    def bw(g):
        gx = g @ wd
        gw = g.T @ xd
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record(out, parents, bw, "linear")


# ---------------------------------------------------------------- convolution

def conv_output_size(size: int, k: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - k) // stride + 1


def _pad(x: np.ndarray, p: int) -> np.ndarray:
    if p == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))


def _windows(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def _conv_fwd(x, w, stride, padding, groups):
    n, cin, h, wd = x.shape
    cout, cg, k, _ = w.shape
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(wd, k, stride, padding)
    win = _windows(_pad(x, padding), k, stride, ho, wo)  # N,C,Ho,Wo,K,K
    if groups == 1:
        out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # N,Ho,Wo,Cout
        return np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    og = cout // groups
    win = win.reshape(n, groups, cg, ho, wo, k, k)
    wg = w.reshape(groups, og, cg, k, k)
    if cg == 1 and og == 1:
        return np.einsum("nghwij,gij->nghw", win[:, :, 0], wg[:, 0, 0]).reshape(n, cout, ho, wo)
    out = np.einsum("ngchwij,gocij->ngohw", win, wg, optimize=True)
    return out.reshape(n, cout, ho, wo)


def _conv_grad_weight(x, g, w_shape, stride, padding, groups):
    n, cin, h, wd = x.shape
    cout, cg, k, _ = w_shape
    ho, wo = g.shape[2], g.shape[3]
    win = _windows(_pad(x, padding), k, stride, ho, wo)
    if groups == 1:
        return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # Cout,Cin,K,K
    og = cout // groups
    win = win.reshape(n, groups, cg, ho, wo, k, k)
    gg = g.reshape(n, groups, og, ho, wo)
    if cg == 1 and og == 1:
        return np.einsum("nghw,nghwij->gij", gg[:, :, 0], win[:, :, 0]).reshape(w_shape)
    return np.einsum("ngohw,ngchwij->gocij", gg, win, optimize=True).reshape(w_shape)


def _conv_grad_input(g, w, x_shape, stride, padding, groups):
    n, cin, h, wd = x_shape
    cout, cg, k, _ = w.shape
    ho, wo = g.shape[2], g.shape[3]
    hp, wp = h + 2 * padding, wd + 2 * padding
    dxp = np.zeros((n, cin, hp, wp), dtype=g.dtype)
    if groups == 1:
        cols = np.tensordot(g, w, axes=([1], [0]))  # N,Ho,Wo,Cin,K,K
        cols = cols.transpose(0, 3, 1, 2, 4, 5)
    else:
        og = cout // groups
        gg = g.reshape(n, groups, og, ho, wo)
        wg = w.reshape(groups, og, cg, k, k)
        if cg == 1 and og == 1:
            cols = np.einsum("nghw,gij->nghwij", gg[:, :, 0], wg[:, 0, 0])
        else:
            cols = np.einsum("ngohw,gocij->ngchwij", gg, wg, optimize=True)
        cols = cols.reshape(n, cin, ho, wo, k, k)
    hs, ws = (ho - 1) * stride + 1, (wo - 1) * stride + 1
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + hs : stride, j : j + ws : stride] += cols[..., i, j]
    if padding:
        return dxp[:, :, padding : padding + h, padding : padding + wd]
    return dxp


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
           padding: int = 0, groups: int = 1) -> Tensor:
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-d input and weight, got {x.shape}, {weight.shape}")
    n, cin, h, w = x.shape
    cout, cg, k, k2 = weight.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ConfigError(f"conv2d: groups={groups} must divide Cin={cin} and Cout={cout}")
    if cg != cin // groups or k != k2:
        raise DimensionError(f"conv2d: weight {weight.shape} does not match input {x.shape} with groups={groups}")
    if k > h + 2 * padding or k > w + 2 * padding:
        raise DimensionError(f"conv2d: kernel {k} larger than padded input {h}x{w}+{padding}")
    if bias is not None and bias.shape != (cout,):
        raise DimensionError(f"conv2d: bias {bias.shape} vs Cout={cout}")
    xd, wd = x.data, weight.data
    out = _conv_fwd(xd, wd, stride, padding, groups)
    if bias is not None:
        out += bias.data[None, :, None, None]

    def bw(g):
        gx = _conv_grad_input(g, wd, xd.shape, stride, padding, groups) if x.requires_grad else None
        gw = _conv_grad_weight(xd, g, wd.shape, stride, padding, groups) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record(out, parents, bw, "conv2d")


def conv_transpose2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1,
                     padding: int = 0, output_padding: int = 0) -> Tensor:
    """Adjoint of :func:`conv2d`; ``weight`` is ``[Cin, Cout, K, K]``."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise DimensionError(f"conv_transpose2d: input {x.shape} vs weight {weight.shape}")
    n, cin, h, w = x.shape
    _, cout, k, _ = weight.shape
    ho = (h - 1) * stride - 2 * padding + k + output_padding
    wo = (w - 1) * stride - 2 * padding + k + output_padding
    if ho <= 0 or wo <= 0:
        raise DimensionError("conv_transpose2d: non-positive output size")
    xd, wd = x.data, weight.data
    out = _conv_grad_input(xd, wd, (n, cout, ho, wo), stride, padding, 1)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    def bw(g):
        gx = _conv_fwd(g, wd, stride, padding, 1) if x.requires_grad else None
        gw = _conv_grad_weight(g, xd, wd.shape, stride, padding, 1) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return record(np.ascontiguousarray(out), parents, bw, "conv_transpose2d")


# ---------------------------------------------------------------- pooling

def _check_window(x: Tensor, k: int, op: str):
    if x.ndim != 4:
        raise DimensionError(f"{op}: expected N,C,H,W input, got {x.shape}")
    if k > x.shape[2] or k > x.shape[3]:
        raise DimensionError(f"{op}: window {k} larger than input {x.shape[2]}x{x.shape[3]}")


def max_pool2d(x: Tensor, k: int, stride: Optional[int] = None) -> Tensor:
    stride = stride or k
    _check_window(x, k, "max_pool2d")
    n, c, h, w = x.shape
    ho, wo = conv_output_size(h, k, stride, 0), conv_output_size(w, k, stride, 0)
    win = _windows(x.data, k, stride, ho, wo).reshape(n, c, ho, wo, k * k)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    hs, ws = (ho - 1) * stride + 1, (wo - 1) * stride + 1

    def bw(g):
        dx = np.zeros(x.shape, dtype=g.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + hs : stride, j : j + ws : stride] += g * (arg == i * k + j)
        return (dx,)

    return record(np.ascontiguousarray(out), (x,), bw, "max_pool2d")


def avg_pool2d(x: Tensor, k: int, stride: Optional[int] = None) -> Tensor:
    stride = stride or k
    _check_window(x, k, "avg_pool2d")
    n, c, h, w = x.shape
    ho, wo = conv_output_size(h, k, stride, 0), conv_output_size(w, k, stride, 0)
    win = _windows(x.data, k, stride, ho, wo)
    out = win.mean(axis=(-2, -1))
    hs, ws = (ho - 1) * stride + 1, (wo - 1) * stride + 1
    scale = 1.0 / (k * k)

    def bw(g):
        dx = np.zeros(x.shape, dtype=g.dtype)
        gs = g * scale
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + hs : stride, j : j + ws : stride] += gs
        return (dx,)

    return record(out, (x,), bw, "avg_pool2d")


def global_avg_pool2d(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool2d: expected N,C,H,W input, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3), keepdims=True)

    def bw(g):
        return (np.broadcast_to(g / (h * w), x.shape).copy(),)

    return record(out, (x,), bw, "global_avg_pool2d")


def upsample_nearest(x: Tensor, out_hw: Sequence[int]) -> Tensor:
    """Nearest-neighbour resize of the spatial dims to exactly ``out_hw``."""
    if x.ndim != 4:
        raise DimensionError(f"upsample_nearest: expected N,C,H,W input, got {x.shape}")
    h, w = x.shape[2], x.shape[3]
    ho, wo = out_hw
    rows = (np.arange(ho) * h) // ho
    cols = (np.arange(wo) * w) // wo
    out = x.data[:, :, rows[:, None], cols[None, :]]

    def bw(g):
        dx = np.zeros(x.shape, dtype=g.dtype)
        np.add.at(dx, (slice(None), slice(None), rows[:, None], cols[None, :]), g)
        return (dx,)

    return record(out, (x,), bw, "upsample_nearest")


# ---------------------------------------------------------------- normalization

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, train: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel normalization over all non-channel axes.

    In train mode the running statistics arrays are updated in place.
    """
    if x.ndim not in (2, 4):
        raise DimensionError(f"batch_norm: expected 2-d or 4-d input, got {x.shape}")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm: affine params {gamma.shape} vs channels {c}")
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    bshape = (1, c) if x.ndim == 2 else (1, c, 1, 1)
    xd = x.data
    if train:
        mu = xd.mean(axis=axes)
        var = xd.var(axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var
    else:
        mu, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(xd.dtype)
    xhat = (xd - mu.reshape(bshape).astype(xd.dtype)) * inv.reshape(bshape)
    gd = gamma.data.reshape(bshape)
    out = xhat * gd + beta.data.reshape(bshape)
    m = xd.size // c

    def bw(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        gxhat = g * gd
        if train:
            dx = (inv.reshape(bshape) / m) * (
                m * gxhat - gxhat.sum(axis=axes).reshape(bshape)
                - xhat * (gxhat * xhat).sum(axis=axes).reshape(bshape))
        else:
            dx = gxhat * inv.reshape(bshape)
        return dx, dgamma, dbeta

    return record(out, (x, gamma, beta), bw, "batch_norm")


def dropout(x: Tensor, rate: float, train: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in train mode needs an rng")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1.0 - rate)
    return record(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ---------------------------------------------------------------- softmax family

def softmax(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"softmax expects a rank-2 input, got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=1, keepdims=True)),)

    return record(out, (x,), bw, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"log_softmax expects a rank-2 input, got {x.shape}")
    z = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=1, keepdims=True),)

    return record(out, (x,), bw, "log_softmax")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "softmax-rows":
        return softmax(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ConfigError(f"unknown activation {kind!r}")


def pool2d(x: Tensor, kind: str, k: int = 2, stride: Optional[int] = None) -> Tensor:
    if kind == "max":
        return max_pool2d(x, k, stride)
    if kind == "avg":
        return avg_pool2d(x, k, stride)
    if kind == "global-avg":
        return global_avg_pool2d(x)
    raise ConfigError(f"unknown pool kind {kind!r}")


def one_hot_rows(target: np.ndarray, classes: int) -> np.ndarray:
    target = np.asarray(target)
    if target.size and (target.min() < 0 or target.max() >= classes):
        raise DataError(f"class index out of range [0, {classes})")
    out = np.zeros((target.shape[0], classes))
    out[np.arange(target.shape[0]), target] = 1.0
    return out

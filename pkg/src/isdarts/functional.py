"""Differentiable primitives on :class:`~isdarts.tensor.Tensor`.

Spatial tensors are laid out as (batch, channels, height, width).
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, UsageError
from .tensor import Tensor, as_tensor, make_result


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ----------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    try:
        data = a.data + b.data
    except ValueError as exc:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from exc

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result(data, (a, b), bw, "add")


def add_n(tensors) -> Tensor:
    """Sum of equally shaped tensors, accumulated left to right."""
    tensors = list(tensors)
    if not tensors:
        raise UsageError("add_n of an empty list")
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise DimensionError(f"add_n: shape {t.shape} differs from {shape}")
    data = tensors[0].data.copy()
    for t in tensors[1:]:
        data += t.data

    def bw(g):
        return tuple(g for _ in tensors)

    return make_result(data, tensors, bw, "add_n")


def neg(a: Tensor) -> Tensor:
    return make_result(-a.data, (a,), lambda g: (-g,), "neg")


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)
    try:
        data = a.data * b.data
    except ValueError as exc:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} do not broadcast") from exc

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result(data, (a, b), bw, "mul")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        data = np.exp(x.data)  # overflow surfaces as NumericalError below
    return make_result(data, (x,), lambda g: (g * data,), "exp")


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return make_result(s, (x,), bw, "softmax")


# ------------------------------------------------------------------- reshaping


def sum(x: Tensor, axis=None) -> Tensor:  # noqa: A001 - mirrors numpy
    data = np.asarray(x.data.sum(axis=axis))

    def bw(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result(data, (x,), bw, "sum")


def mean(x: Tensor, axis=None) -> Tensor:
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis), 1.0 / count)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}") from exc
    return make_result(data, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def index(x: Tensor, idx) -> Tensor:
    data = np.asarray(x.data[idx])

    def bw(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return make_result(data, (x,), bw, "index")


def concat(tensors, axis: int = 1) -> Tensor:
    tensors = list(tensors)
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in tensors]}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(data, tensors, bw, "concat")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    data = a.data @ b.data
    return make_result(data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g), "matmul")


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` shaped (out, in)."""
    if x.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not match weight {weight.shape}")
    data = x.data @ weight.data.T
    parents = [x, weight]
    if bias is not None:
        data = data + bias.data
        parents.append(bias)

    def bw(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return grads

    return make_result(data, parents, bw, "linear")


# ---------------------------------------------------------------- convolution


def _out_size(n, k, stride, padding, dilation):
    return (n + 2 * padding - dilation * (k - 1) - 1) // stride + 1


def _im2col(xp, k, stride, dilation, ho, wo):
    # (N, C, H, W) -> (N, C, k, k, ho, wo)
    n, c = xp.shape[:2]
    cols = np.empty((n, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        hi = i * dilation
        for j in range(k):
            wj = j * dilation
            cols[:, :, i, j] = xp[:, :, hi:hi + stride * ho:stride, wj:wj + stride * wo:stride]
    return cols


def _col2im(cols, xp_shape, k, stride, dilation, ho, wo):
    xp = np.zeros(xp_shape, dtype=cols.dtype)
    for i in range(k):
        hi = i * dilation
        for j in range(k):
            wj = j * dilation
            xp[:, :, hi:hi + stride * ho:stride, wj:wj + stride * wo:stride] += cols[:, :, i, j]
    return xp


def _pad(x, padding, value=0.0):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)), constant_values=value)


def _unpad(xp, padding):
    if padding == 0:
        return xp
    return xp[:, :, padding:-padding, padding:-padding]


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0,
           dilation: int = 1, groups: int = 1) -> Tensor:
    """2-D convolution (cross-correlation) without bias.

    ``weight`` has shape (C_out, C_in // groups, k, k).
    """
    if x.ndim != 4:
        raise DimensionError(f"conv2d expects a rank-4 input, got shape {x.shape}")
    n, cin, h, w = x.shape
    cout, cin_g, k, k2 = weight.shape
    if k != k2 or cin % groups or cout % groups or cin // groups != cin_g:
        raise DimensionError(
            f"conv2d: input channels {cin} incompatible with weight {weight.shape} (groups={groups})"
        )
    ho = _out_size(h, k, stride, padding, dilation)
    wo = _out_size(w, k, stride, padding, dilation)
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"conv2d: input {h}x{w} too small for kernel {k} dilation {dilation}")
    xp = _pad(x.data, padding)
    cols = _im2col(xp, k, stride, dilation, ho, wo)
    kk = cin_g * k * k
    cols_g = cols.reshape(n, groups, kk, ho * wo)
    w_g = weight.data.reshape(groups, cout // groups, kk)
    out = np.matmul(w_g, cols_g).reshape(n, cout, ho, wo)

    def bw(g):
        g_g = g.reshape(n, groups, cout // groups, ho * wo)
        gw = np.matmul(g_g, cols_g.transpose(0, 1, 3, 2)).sum(axis=0)
        gcols = np.matmul(w_g.transpose(0, 2, 1), g_g)
        gcols = gcols.reshape(n, cin, k, k, ho, wo)
        gx = _unpad(_col2im(gcols, xp.shape, k, stride, dilation, ho, wo), padding)
        return gx, gw.reshape(weight.shape)

    return make_result(out, (x, weight), bw, "conv2d")


def avg_pool2d(x: Tensor, k: int = 3, stride: int = 1, padding: int = 1) -> Tensor:
    """Average pooling that excludes padded positions from the divisor."""
    if x.ndim != 4:
        raise DimensionError(f"avg_pool2d expects a rank-4 input, got shape {x.shape}")
    n, c, h, w = x.shape
    ho = _out_size(h, k, stride, padding, 1)
    wo = _out_size(w, k, stride, padding, 1)
    xp = _pad(x.data, padding)
    summed = _im2col(xp, k, stride, 1, ho, wo).sum(axis=(2, 3))
    ones = _pad(np.ones((1, 1, h, w), dtype=x.dtype), padding)
    counts = _im2col(ones, k, stride, 1, ho, wo).sum(axis=(2, 3))
    out = summed / counts

    def bw(g):
        gc = np.broadcast_to((g / counts)[:, :, None, None], (n, c, k, k, ho, wo))
        return (_unpad(_col2im(gc, xp.shape, k, stride, 1, ho, wo), padding),)

    return make_result(out, (x,), bw, "avg_pool2d")


def max_pool2d(x: Tensor, k: int = 3, stride: int = 1, padding: int = 1) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"max_pool2d expects a rank-4 input, got shape {x.shape}")
    n, c, h, w = x.shape
    ho = _out_size(h, k, stride, padding, 1)
    wo = _out_size(w, k, stride, padding, 1)
    xp = _pad(x.data, padding, value=-np.inf)
    cols = _im2col(xp, k, stride, 1, ho, wo).reshape(n, c, k * k, ho, wo)
    arg = cols.argmax(axis=2)
    out = np.take_along_axis(cols, arg[:, :, None], axis=2)[:, :, 0]

    def bw(g):
        onehot = np.zeros((n, c, k * k, ho, wo), dtype=g.dtype)
        np.put_along_axis(onehot, arg[:, :, None], g[:, :, None], axis=2)
        gx = _col2im(onehot.reshape(n, c, k, k, ho, wo), xp.shape, k, stride, 1, ho, wo)
        return (_unpad(gx, padding),)

    return make_result(out, (x,), bw, "max_pool2d")


def global_avg_pool(x: Tensor) -> Tensor:
    if x.ndim != 4:
        raise DimensionError(f"global_avg_pool expects a rank-4 input, got shape {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def bw(g):
        return (np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy(),)

    return make_result(out, (x,), bw, "global_avg_pool")


def batch_norm(x: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.9, eps: float = 1e-5,
               gamma: Tensor | None = None, beta: Tensor | None = None) -> Tensor:
    """Per-channel normalization over (batch, height, width).

    In training mode batch statistics are used and the running buffers are
    updated in place as ``running = momentum * running + (1 - momentum) * batch``.
    """
    if x.ndim != 4 or x.shape[1] != running_mean.shape[0]:
        raise DimensionError(f"batch_norm: input {x.shape} vs {running_mean.shape[0]} channels")
    axes = (0, 2, 3)
    if training:
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * m / max(m - 1, 1)
        running_mean *= momentum
        running_mean += (1 - momentum) * mu
        running_var *= momentum
        running_var += (1 - momentum) * unbiased
    else:
        mu, var = running_mean, running_var
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = (x.data - mu[None, :, None, None]) * inv[None, :, None, None]
    out = xhat
    parents = [x]
    if gamma is not None:
        out = out * gamma.data[None, :, None, None] + beta.data[None, :, None, None]
        parents += [gamma, beta]

    def bw(g):
        grads = []
        gx_hat = g if gamma is None else g * gamma.data[None, :, None, None]
        if training:
            m = x.shape[0] * x.shape[2] * x.shape[3]
            s1 = gx_hat.sum(axis=axes)[None, :, None, None]
            s2 = (gx_hat * xhat).sum(axis=axes)[None, :, None, None]
            gx = inv[None, :, None, None] / m * (m * gx_hat - s1 - xhat * s2)
        else:
            gx = gx_hat * inv[None, :, None, None]
        grads.append(gx)
        if gamma is not None:
            grads.append((g * xhat).sum(axis=axes))
            grads.append(g.sum(axis=axes))
        return grads

    return make_result(out.astype(x.dtype, copy=False), parents, bw, "batch_norm")


# ----------------------------------------------------------------------- loss


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    if logits.ndim != 2:
        raise DimensionError(f"logits must be N x K, got shape {logits.shape}")
    labels = np.asarray(labels, dtype=np.int64)
    n, k = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if n == 0:
        raise UsageError("empty batch")
    if labels.min() < 0 or labels.max() >= k:
        raise UsageError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    nll = logsum - z[np.arange(n), labels]
    loss = np.asarray(nll.mean(), dtype=logits.dtype)

    def bw(g):
        p = np.exp(z - logsum[:, None])
        p[np.arange(n), labels] -= 1.0
        return (p * (g / n),)

    return make_result(loss, (logits,), bw, "softmax_cross_entropy")

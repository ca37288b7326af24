"""Dense arrays with a small reverse-mode autodiff engine.

Only the operations the segmentation model needs are provided. Every op
takes and returns :class:`Tensor` objects, records a backward closure on the
output, and :meth:`Tensor.backward` replays those closures in reverse
topological order.
"""
from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

DTYPES = (np.float32, np.float64)


class GeometryError(ValueError):
    """Raised when spatial extents make an op undefined."""


class Tensor:
    """n-dimensional array with optional gradient tracking.

    ``grad`` is populated on leaves with ``requires_grad=True`` after
    :meth:`backward` and accumulates across calls until :meth:`zero_grad`.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str = ""):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in DTYPES:
            arr = arr.astype(np.float64 if dtype is None else dtype)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    def backward(self):
        """Backpropagate from a scalar loss into every tracked leaf."""
        if self.data.size != 1:
            raise ValueError(f"backward() needs a scalar tensor, got shape {self.shape}")
        order = _topological_order(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # thin operator sugar, kept to what the model and tests need
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(_lift(other, self.dtype), -1.0))

    def sum(self):
        return sum_all(self)

    def mean(self, axis=None):
        return mean(self, axis)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _topological_order(root: Tensor) -> list:
    order, seen = [], set()
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
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def _lift(x, dtype) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _check_dtypes(*tensors: Tensor):
    dts = {t.dtype for t in tensors if t is not None}
    if len(dts) > 1:
        raise TypeError(f"mixed dtypes in one op: {sorted(str(d) for d in dts)}")


# ---------------------------------------------------------------- elementwise

def add(a: Tensor, b) -> Tensor:
    """Elementwise sum; ``b`` must match ``a``'s shape or be a scalar."""
    b = _lift(b, a.dtype)
    if b.shape not in ((), a.shape) and a.shape != ():
        raise ValueError(f"add: shapes {a.shape} and {b.shape} differ")
    if a.shape == () and b.shape != ():
        a, b = b, a
    _check_dtypes(a, b)
    scalar_b = b.shape == () and a.shape != ()

    def backward(g):
        return g, (g.sum() if scalar_b else g)

    return _result(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product with a same-shape tensor or a constant."""
    if not isinstance(b, Tensor):
        c = np.asarray(b, dtype=a.dtype)
        return _result(a.data * c, (a,), lambda g: (g * c,))
    if a.shape != b.shape:
        raise ValueError(f"mul: shapes {a.shape} and {b.shape} differ")
    _check_dtypes(a, b)
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    s = _stable_sigmoid(x.data)
    return _result(s, (x,), lambda g: (g * s * (1 - s),))


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e)).astype(z.dtype)


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    _check_dtypes(*tensors)
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def gather(x: Tensor, index: np.ndarray) -> Tensor:
    """``x[index]`` along the first axis; repeated indices sum on backward."""
    index = np.asarray(index, dtype=np.intp)
    n = x.shape[0]

    def backward(g):
        out = np.zeros((n,) + g.shape[1:], dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return _result(x.data[index], (x,), backward)


def sum_all(x: Tensor) -> Tensor:
    shape = x.shape
    return _result(np.asarray(x.data.sum(), dtype=x.dtype), (x,),
                   lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(x: Tensor, axis=None) -> Tensor:
    """Mean over ``axis`` (an int, tuple, or None for all axes)."""
    shape = x.shape
    axes = tuple(range(x.ndim)) if axis is None else (axis if isinstance(axis, tuple) else (axis,))
    axes = tuple(a % x.ndim for a in axes)
    count = int(np.prod([shape[a] for a in axes]))
    out = np.asarray(x.data.mean(axis=axes), dtype=x.dtype)

    def backward(g):
        g = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(g / count, shape).astype(x.dtype),)

    return _result(out, (x,), backward)


# ---------------------------------------------------------------- convolution

def _im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Columns shaped [B, C*k*k, ho*wo], ordered (c, ki, kj) to match a flattened kernel."""
    b, c = xp.shape[:2]
    cols = np.empty((b, c, k, k, ho, wo), dtype=xp.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
    return cols.reshape(b, c * k * k, ho * wo)


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with zero padding, computed as im2col + GEMM.

    x: [B, Cin, H, W]; kernel: [Cout, Cin, k, k]; bias: [Cout] or None.
    """
    if x.ndim != 4 or kernel.ndim != 4:
        raise ValueError(f"conv2d expects 4-D input and kernel, got {x.shape} and {kernel.shape}")
    b, cin, h, w = x.shape
    cout, kcin, k, k2 = kernel.shape
    if k != k2:
        raise ValueError(f"conv2d needs square kernels, got {k}x{k2}")
    if kcin != cin:
        raise ValueError(f"conv2d: input has {cin} channels but kernel expects {kcin}")
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"conv2d: bias shape {bias.shape} != ({cout},)")
    if stride < 1 or padding < 0:
        raise GeometryError(f"conv2d: stride={stride}, padding={padding}")
    _check_dtypes(x, kernel, bias)
    hp, wp = h + 2 * padding, w + 2 * padding
    if k > hp or k > wp:
        raise GeometryError(f"conv2d: kernel {k} larger than padded input {hp}x{wp}")
    ho, wo = (hp - k) // stride + 1, (wp - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, k, stride, ho, wo)
    wmat = kernel.data.reshape(cout, -1)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[:, None]
    out = out.reshape(b, cout, ho, wo)

    def backward(g):
        g3 = g.reshape(b, cout, ho * wo)
        gk = gb = gx = None
        if kernel.requires_grad:
            gk = np.einsum("bop,bip->oi", g3, cols, optimize=True).reshape(kernel.shape)
        if bias is not None and bias.requires_grad:
            gb = g3.sum(axis=(0, 2))
        if x.requires_grad and stride == 1 and padding <= k - 1:
            # input gradient = full correlation with the flipped, transposed kernel
            q = k - 1 - padding
            gp = np.pad(g, ((0, 0), (0, 0), (q, q), (q, q))) if q else g
            wflip = kernel.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3).reshape(cin, -1)
            gx = np.matmul(wflip, _im2col(gp, k, 1, h, w)).reshape(b, cin, h, w)
        elif x.requires_grad:
            gcols = np.matmul(wmat.T, g3).reshape(b, cin, k, k, ho, wo)
            gxp = np.zeros((b, cin, hp, wp), dtype=g.dtype)
            for i in range(k):
                for j in range(k):
                    gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, i, j]
            gx = gxp[:, :, padding:padding + h, padding:padding + w] if padding else gxp
        return gx, gk, gb

    parents = (x, kernel) if bias is None else (x, kernel, bias)
    return _result(out, parents, backward)


def maxpool2(x: Tensor) -> Tensor:
    """2x2 max pooling with stride 2; ties go to the first element in row-major order."""
    b, c, h, w = x.shape
    if h % 2 or w % 2:
        raise GeometryError(f"maxpool2 needs even spatial extents, got {h}x{w}")
    win = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        gw = np.zeros(win.shape, dtype=g.dtype)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gx = gw.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        return (gx,)

    return _result(out, (x,), backward)


def upsample_nearest2(x: Tensor) -> Tensor:
    b, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)
    return _result(out, (x,), lambda g: (g.reshape(b, c, h, 2, w, 2).sum(axis=(3, 5)),))


def matmul_bias(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map ``x @ weight.T + bias`` for x: [B, N], weight: [M, N], bias: [M]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ValueError(f"matmul_bias: input {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise ValueError(f"matmul_bias: bias {bias.shape} != ({weight.shape[0]},)")
    _check_dtypes(x, weight, bias)

    def backward(g):
        return g @ weight.data, g.T @ x.data, g.sum(axis=0)

    return _result(x.data @ weight.data.T + bias.data, (x, weight, bias), backward)


# ---------------------------------------------------------------- normalization

class RunningStats:
    """Exponential moving averages of per-group mean and (unbiased) variance."""

    def __init__(self, n: int, dtype=np.float32):
        self.mean = np.zeros(n, dtype=dtype)
        self.var = np.ones(n, dtype=dtype)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, stats: RunningStats, training: bool,
              momentum: float = 0.1, eps: float = 1e-5, groups: Optional[np.ndarray] = None) -> Tensor:
    """Batch normalization with statistics shared inside channel groups.

    ``groups[c]`` names the group of channel ``c``; statistics are pooled over
    the batch, the spatial grid and every channel of a group. ``groups=None``
    means one group per channel.
    """
    b, c, h, w = x.shape
    groups = np.arange(c) if groups is None else np.asarray(groups, dtype=np.intp)
    ng = int(groups.max()) + 1
    if gamma.shape != (ng,) or beta.shape != (ng,):
        raise ValueError(f"batchnorm: {ng} groups but gamma {gamma.shape}, beta {beta.shape}")
    _check_dtypes(x, gamma, beta)
    per_group = np.bincount(groups, minlength=ng)
    n = per_group * (b * h * w)

    def group_mean(a):  # a: [B,C,H,W] -> [G]
        return np.bincount(groups, weights=a.sum(axis=(0, 2, 3)), minlength=ng) / n

    if training:
        if b * h * w < 2:
            raise GeometryError("batchnorm in train mode needs at least 2 values per channel")
        mu = group_mean(x.data)
        xc = x.data - mu[groups][None, :, None, None]
        var = group_mean(xc * xc)
        stats.mean[...] = (1 - momentum) * stats.mean + momentum * mu
        stats.var[...] = (1 - momentum) * stats.var + momentum * var * n / np.maximum(n - 1, 1)
    else:
        mu = stats.mean.astype(np.float64)
        var = stats.var.astype(np.float64)
        xc = x.data - mu[groups][None, :, None, None]
    inv = (1.0 / np.sqrt(var + eps))
    xhat = (xc * inv[groups][None, :, None, None]).astype(x.dtype)
    g_c = gamma.data[groups][None, :, None, None]
    out = xhat * g_c + beta.data[groups][None, :, None, None]

    def backward(g):
        dgamma = np.bincount(groups, weights=(g * xhat).sum(axis=(0, 2, 3)), minlength=ng).astype(g.dtype)
        dbeta = np.bincount(groups, weights=g.sum(axis=(0, 2, 3)), minlength=ng).astype(g.dtype)
        dxhat = g * g_c
        if training:
            m1 = group_mean(dxhat)[groups][None, :, None, None]
            m2 = group_mean(dxhat * xhat)[groups][None, :, None, None]
            dx = (dxhat - m1 - xhat * m2) * inv[groups][None, :, None, None]
        else:
            dx = dxhat * inv[groups][None, :, None, None]
        return dx.astype(g.dtype), dgamma, dbeta

    return _result(out.astype(x.dtype), (x, gamma, beta), backward)


def batchnorm_channel(x: Tensor, gamma: Tensor, beta: Tensor, stats: RunningStats, training: bool,
                      momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (B, H, W)."""
    if gamma.shape != (x.shape[1],):
        raise ValueError(f"batchnorm_channel: {x.shape[1]} channels but gamma {gamma.shape}")
    return batchnorm(x, gamma, beta, stats, training, momentum, eps)


# ---------------------------------------------------------------- losses

def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-softmax of the true class."""
    labels = np.asarray(labels, dtype=np.intp)
    bsz, k = logits.shape
    if labels.shape != (bsz,):
        raise ValueError(f"softmax_cross_entropy: {bsz} logits rows but labels shape {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise IndexError(f"labels must lie in [0, {k}), got {labels.tolist()}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    loss = -logp[np.arange(bsz), labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(bsz), labels] -= 1
        return (g * p / bsz,)

    return _result(np.asarray(loss, dtype=logits.dtype), (logits,), backward)


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy on logits, in the overflow-free form."""
    t = targets.data if isinstance(targets, Tensor) else np.asarray(targets)
    if t.shape != logits.shape:
        raise ValueError(f"bce_with_logits: logits {logits.shape} vs targets {t.shape}")
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("bce_with_logits: targets must be 0 or 1")
    t = t.astype(logits.dtype)
    z = logits.data
    per = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def backward(g):
        return (g * (_stable_sigmoid(z) - t) / n,)

    return _result(np.asarray(per.mean(), dtype=logits.dtype), (logits,), backward)

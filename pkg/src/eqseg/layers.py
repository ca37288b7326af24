"""Layers acting on geometric tensors, and the two-conv block of the U-Net."""
from __future__ import annotations

from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .group import FieldType, GeometricTensor, trivial_rep
from .kernels import pair_basis
from .tensor import (RunningStats, Tensor, _result, batchnorm, concat, conv2d, gather, maxpool2, mean, mul,
                     relu, upsample_nearest2)


class Module:
    """Minimal parameter container.

    Parameters are ``Tensor`` attributes with ``requires_grad``; running
    statistics are ``RunningStats`` attributes; submodules may be attributes
    or lists. Attribute insertion order fixes parameter order.
    """

    training = True

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, value in vars(self).items():
            for sub_name, sub in _walk(name, value):
                if isinstance(sub, Tensor) and sub.requires_grad:
                    yield prefix + sub_name, sub
                elif isinstance(sub, Module):
                    yield from sub.named_parameters(prefix + sub_name + ".")

    def parameters(self) -> List[Tensor]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, value in vars(self).items():
            for sub_name, sub in _walk(name, value):
                if isinstance(sub, RunningStats):
                    yield prefix + sub_name + ".mean", sub.mean
                    yield prefix + sub_name + ".var", sub.var
                elif isinstance(sub, Module):
                    yield from sub.named_buffers(prefix + sub_name + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for name, value in vars(self).items():
            for _, sub in _walk(name, value):
                if isinstance(sub, Module):
                    yield from sub.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _walk(name, value):
    if isinstance(value, (list, tuple)):
        for i, v in enumerate(value):
            yield f"{name}.{i}", v
    else:
        yield name, value


def param_count(module: Module) -> int:
    """Number of trainable scalars in ``module``."""
    return sum(p.size for p in module.parameters())


def _check_input(x: GeometricTensor, expected: FieldType, who: str):
    if x.field_type != expected:
        raise ValueError(f"{who}: input field type {x.field_type} does not match {expected}")


# ---------------------------------------------------------------- convolution

class _KernelPlan:
    """Bookkeeping that maps a flat coefficient vector onto a full kernel.

    Field pairs are grouped by (input representation, output representation);
    each group shares one basis and owns a [n_out, n_in, count] coefficient
    block.
    """

    def __init__(self, in_type: FieldType, out_type: FieldType, k: int):
        self.k = k
        self.shape = (out_type.total_dim, in_type.total_dim, k, k)
        self.blocks = []
        offset = 0
        for rout in dict.fromkeys(out_type.fields):
            o_fields = [i for i, r in enumerate(out_type.fields) if r == rout]
            o_ch = np.concatenate([np.arange(out_type.total_dim)[out_type.channel_slices[i]] for i in o_fields])
            for rin in dict.fromkeys(in_type.fields):
                i_fields = [i for i, r in enumerate(in_type.fields) if r == rin]
                i_ch = np.concatenate([np.arange(in_type.total_dim)[in_type.channel_slices[i]] for i in i_fields])
                basis = pair_basis(rin, rout, k)
                n = len(o_fields) * len(i_fields) * basis.shape[0]
                if n:
                    self.blocks.append((offset, len(o_fields), len(i_fields), basis, o_ch, i_ch))
                offset += n
        self.count = offset

    def expand(self, coeffs: Tensor) -> Tensor:
        dtype = coeffs.dtype
        out = np.zeros(self.shape, dtype=dtype)
        cache = []
        for offset, fo, fi, basis, o_ch, i_ch in self.blocks:
            nb, do, di = basis.shape[:3]
            c = coeffs.data[offset:offset + fo * fi * nb].reshape(fo, fi, nb)
            b = basis.astype(dtype)
            block = np.einsum("ojn,nabxy->oajbxy", c, b).reshape(fo * do, fi * di, self.k, self.k)
            out[np.ix_(o_ch, i_ch)] = block
            cache.append(b)

        def backward(g):
            gc = np.zeros(coeffs.shape, dtype=g.dtype)
            for (offset, fo, fi, basis, o_ch, i_ch), b in zip(self.blocks, cache):
                nb, do, di = basis.shape[:3]
                gb = g[np.ix_(o_ch, i_ch)].reshape(fo, do, fi, di, self.k, self.k)
                gc[offset:offset + fo * fi * nb] = np.einsum("oajbxy,nabxy->ojn", gb, b).reshape(-1)
            return (gc,)

        return _result(out, (coeffs,), backward)


class EquivariantConv(Module):
    """Convolution whose kernel is constrained to the equivariant subspace.

    Learnable state is one coefficient per basis element of every
    (input field, output field) pair plus one bias per output field.
    ``padding=None`` means same-padding ``(k-1)//2``.
    """

    def __init__(self, in_type: FieldType, out_type: FieldType, kernel_size: int = 3,
                 stride: int = 1, padding: Optional[int] = None, rng=None, dtype=np.float32,
                 bias: bool = True):
        if in_type.group != out_type.group:
            raise ValueError("EquivariantConv: input and output field types use different groups")
        self.in_type, self.out_type = in_type, out_type
        self.kernel_size, self.stride = kernel_size, stride
        self.padding = (kernel_size - 1) // 2 if padding is None else padding
        self.plan = _KernelPlan(in_type, out_type, kernel_size)
        rng = np.random.default_rng(0) if rng is None else rng
        self.coeffs = Tensor(self._init_coeffs(rng).astype(dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(len(out_type), dtype=dtype), requires_grad=True) if bias else None

    def _init_coeffs(self, rng) -> np.ndarray:
        # He scaling: expanded kernel entries get variance about 2 / fan_in
        fan_in = self.in_type.total_dim * self.kernel_size ** 2
        c = np.zeros(self.plan.count)
        for offset, fo, fi, basis, _, _ in self.plan.blocks:
            nb, do, di = basis.shape[:3]
            std = np.sqrt(2.0 * do * di * self.kernel_size ** 2 / (fan_in * nb))
            c[offset:offset + fo * fi * nb] = rng.normal(0.0, std, fo * fi * nb)
        return c

    def expand_kernel(self) -> Tensor:
        return self.plan.expand(self.coeffs)

    def channel_bias(self) -> Optional[Tensor]:
        if self.bias is None:
            return None
        return gather(self.bias, self.out_type.field_of_channel)

    def forward(self, x: GeometricTensor) -> GeometricTensor:
        _check_input(x, self.in_type, "EquivariantConv")
        y = conv2d(x.tensor, self.expand_kernel(), self.channel_bias(), self.stride, self.padding)
        return GeometricTensor(y, self.out_type)


# ---------------------------------------------------------------- pointwise / pooling

def group_pool(x: GeometricTensor) -> GeometricTensor:
    """Average every regular field over its channels, giving one trivial field each."""
    ft = x.field_type
    if any(r.kind != "regular" for r in ft.fields):
        raise ValueError(f"group_pool needs all-regular fields, got {ft}")
    b, c, h, w = x.shape
    m = ft.group.order
    y = mean(x.tensor.reshape(b, c // m, m, h, w), axis=2)
    return GeometricTensor(y, FieldType(ft.group, (trivial_rep(ft.group),) * len(ft)))


def field_relu(x: GeometricTensor) -> GeometricTensor:
    return GeometricTensor(relu(x.tensor), x.field_type)


def field_maxpool2(x: GeometricTensor) -> GeometricTensor:
    """Channelwise 2x2 max pooling; commutes with quarter turns on even grids."""
    return GeometricTensor(maxpool2(x.tensor), x.field_type)


def field_upsample2(x: GeometricTensor) -> GeometricTensor:
    return GeometricTensor(upsample_nearest2(x.tensor), x.field_type)


def field_concat(xs: List[GeometricTensor]) -> GeometricTensor:
    ft = xs[0].field_type
    for x in xs[1:]:
        ft = ft + x.field_type
    return GeometricTensor(concat([x.tensor for x in xs], axis=1), ft)


class FieldBatchNorm(Module):
    """Batch normalization with one (gamma, beta, mean, var) per field."""

    def __init__(self, field_type: FieldType, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        self.field_type = field_type
        self.momentum, self.eps = momentum, eps
        n = len(field_type)
        self.gamma = Tensor(np.ones(n, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(n, dtype=dtype), requires_grad=True)
        self.stats = RunningStats(n, dtype)

    def forward(self, x: GeometricTensor) -> GeometricTensor:
        _check_input(x, self.field_type, "FieldBatchNorm")
        y = batchnorm(x.tensor, self.gamma, self.beta, self.stats, self.training,
                      self.momentum, self.eps, groups=self.field_type.field_of_channel)
        return GeometricTensor(y, self.field_type)


class FieldDropout(Module):
    """Dropout with one Bernoulli draw per field and pixel, shared by the field's channels."""

    def __init__(self, field_type: FieldType, p: float = 0.1, rng=None):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"dropout probability must lie in [0, 1], got {p}")
        self.field_type, self.p = field_type, p
        self.rng = np.random.default_rng(0) if rng is None else rng

    def mask(self, batch: int, h: int, w: int) -> np.ndarray:
        """Per-field keep mask of shape [B, n_fields, H, W], already rescaled."""
        if self.p >= 1.0:
            return np.zeros((batch, len(self.field_type), h, w))
        keep = self.rng.random((batch, len(self.field_type), h, w)) >= self.p
        return keep / (1.0 - self.p)

    def forward(self, x: GeometricTensor, mask: Optional[np.ndarray] = None) -> GeometricTensor:
        _check_input(x, self.field_type, "FieldDropout")
        if not self.training or self.p == 0.0:
            return x
        b, _, h, w = x.shape
        if mask is None:
            mask = self.mask(b, h, w)
        full = mask[:, self.field_type.field_of_channel].astype(x.tensor.dtype)
        return GeometricTensor(mul(x.tensor, full), self.field_type)


class ConvBlock(Module):
    """conv -> batchnorm -> relu -> dropout, twice."""

    def __init__(self, in_type: FieldType, out_type: FieldType, kernel_size: int = 3, dropout_p: float = 0.1,
                 rng=None, dtype=np.float32):
        rng = np.random.default_rng(0) if rng is None else rng
        self.in_type, self.out_type = in_type, out_type
        self.conv1 = EquivariantConv(in_type, out_type, kernel_size, rng=rng, dtype=dtype)
        self.bn1 = FieldBatchNorm(out_type, dtype=dtype)
        self.drop1 = FieldDropout(out_type, dropout_p, rng=rng)
        self.conv2 = EquivariantConv(out_type, out_type, kernel_size, rng=rng, dtype=dtype)
        self.bn2 = FieldBatchNorm(out_type, dtype=dtype)
        self.drop2 = FieldDropout(out_type, dropout_p, rng=rng)

    def forward(self, x: GeometricTensor) -> GeometricTensor:
        x = self.drop1(field_relu(self.bn1(self.conv1(x))))
        return self.drop2(field_relu(self.bn2(self.conv2(x))))


def layer_state(module: Module) -> Dict[str, np.ndarray]:
    """Snapshot of parameters and buffers, keyed by dotted name."""
    out = {name: p.data.copy() for name, p in module.named_parameters()}
    out.update({name: b.copy() for name, b in module.named_buffers()})
    return out

"""U-Net with a driver-classification head, in a plain and a rotation-equivariant variant.

Both variants share one topology. The plain variant is the same network
over the trivial group C1, where the kernel constraint is vacuous and every
layer reduces to an ordinary convolution / batchnorm / dropout.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import List, Tuple

import numpy as np

from .group import FieldType, GeometricTensor, make_group, regular_rep, trivial_rep
from .layers import (ConvBlock, EquivariantConv, FieldDropout, Module, field_concat, field_maxpool2,
                     field_upsample2, group_pool, param_count)
from .tensor import Tensor, matmul_bias, mean, relu, reshape

VARIANTS = ("cnn", "equivariant")
HEADS = ("invariant_pool", "flatten", "pooled_flatten")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    variant: str = "equivariant"
    group_n: int = 8
    image_size: int = 64
    widths: Tuple[int, ...] = (8, 16, 32, 64, 64)
    num_classes: int = 4
    dropout_p: float = 0.1
    head: str = "invariant_pool"
    mlp_hidden: Tuple[int, ...] = (64, 32)
    kernel_size: int = 3

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        self.mlp_hidden = tuple(int(h) for h in self.mlp_hidden)
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.head not in HEADS:
            raise ConfigError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.image_size < 16 or self.image_size % 16:
            raise ConfigError(f"image_size must be a positive multiple of 16, got {self.image_size}")
        if len(self.widths) != 5 or min(self.widths) < 1:
            raise ConfigError(f"widths must be 5 positive ints, got {self.widths}")
        if len(self.mlp_hidden) != 2:
            raise ConfigError(f"mlp_hidden must be 2 ints, got {self.mlp_hidden}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.group_n < 1:
            raise ConfigError(f"group_n must be >= 1, got {self.group_n}")
        self.field_counts()

    @property
    def group_order(self) -> int:
        return self.group_n if self.variant == "equivariant" else 1

    def field_counts(self) -> List[int]:
        """Regular fields per encoder stage (widths rounded to multiples of |G|)."""
        n = self.group_order
        counts = [int(round(w / n)) for w in self.widths]
        for w, c in zip(self.widths, counts):
            if c < 1:
                raise ConfigError(f"width {w} cannot be rounded to a positive multiple of {n}")
        return counts

    def to_dict(self) -> dict:
        return asdict(self)


class UNetModel(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        self.group = make_group("cyclic", cfg.group_order)
        g = self.group
        reg, triv = regular_rep(g), trivial_rep(g)
        counts = cfg.field_counts()
        self.in_type = FieldType(g, (triv,) * 3)
        self.stage_types = [FieldType(g, (reg,) * c) for c in counts]
        self.seg_type = FieldType(g, (triv,))
        k, p = cfg.kernel_size, cfg.dropout_p

        self.encoder = []
        prev = self.in_type
        for t in self.stage_types:
            self.encoder.append(ConvBlock(prev, t, k, p, rng=rng, dtype=dtype))
            prev = t
        # decoder block j consumes the upsampled previous output and encoder stage 5-j
        self.decoder = [ConvBlock(self.stage_types[4], self.stage_types[4], k, p, rng=rng, dtype=dtype)]
        prev = self.stage_types[4]
        for i in (3, 2, 1, 0):
            t = self.stage_types[i]
            self.decoder.append(ConvBlock(prev + t, t, k, p, rng=rng, dtype=dtype))
            prev = t
        self.seg_head = EquivariantConv(prev, self.seg_type, 1, rng=rng, dtype=dtype)

        bottleneck = self.image_size_at(4)
        if cfg.head == "invariant_pool":
            n_feat = counts[4]
        elif cfg.head == "pooled_flatten":
            n_feat = counts[4] * bottleneck ** 2
        else:
            n_feat = self.stage_types[4].total_dim * bottleneck ** 2
        dims = [n_feat, *cfg.mlp_hidden, cfg.num_classes]
        self.mlp = []
        for i in range(3):
            fan_in = dims[i]
            w = rng.normal(0.0, np.sqrt(2.0 / fan_in), (dims[i + 1], fan_in)).astype(dtype)
            self.mlp.append(Tensor(w, requires_grad=True))
            self.mlp.append(Tensor(np.zeros(dims[i + 1], dtype=dtype), requires_grad=True))

    def image_size_at(self, stage: int) -> int:
        """Spatial extent of encoder stage ``stage`` (0-based)."""
        return self.cfg.image_size // 2 ** stage

    def set_dropout_rng(self, rng: np.random.Generator):
        for m in self.modules():
            if isinstance(m, FieldDropout):
                m.rng = rng

    def features(self, images) -> Tuple[List[GeometricTensor], GeometricTensor]:
        x = GeometricTensor(_as_tensor(images, self.dtype), self.in_type)
        skips = []
        for i, block in enumerate(self.encoder):
            if i:
                x = field_maxpool2(x)
            x = block(x)
            skips.append(x)
        return skips, x

    def forward(self, images, training: bool = None):
        """Return ``(seg_logits [B,1,H,W], class_logits [B,K])``."""
        if training is not None:
            self.train(training)
        data = images.data if isinstance(images, Tensor) else np.asarray(images)
        s = self.cfg.image_size
        if data.ndim != 4 or data.shape[1:] != (3, s, s):
            raise ValueError(f"expected images of shape [B, 3, {s}, {s}], got {data.shape}")
        skips, bottom = self.features(images)

        x = self.decoder[0](bottom)
        for j, block in enumerate(self.decoder[1:], start=1):
            x = block(field_concat([field_upsample2(x), skips[4 - j]]))
        seg = self.seg_head(x).tensor

        return seg, self.classify(bottom)

    def classify(self, bottom: GeometricTensor) -> Tensor:
        head = self.cfg.head
        b = bottom.shape[0]
        if head == "invariant_pool":
            feat = mean(group_pool(bottom).tensor, axis=(2, 3))
        elif head == "pooled_flatten":
            feat = reshape(group_pool(bottom).tensor, (b, -1))
        else:
            feat = reshape(bottom.tensor, (b, -1))
        for i in range(3):
            feat = matmul_bias(feat, self.mlp[2 * i], self.mlp[2 * i + 1])
            if i < 2:
                feat = relu(feat)
        return feat


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x if x.dtype == dtype else Tensor(x.data.astype(dtype), x.requires_grad)
    return Tensor(np.asarray(x, dtype=dtype))


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> UNetModel:
    """Deterministically initialized model; the same seed gives identical parameters."""
    rng = np.random.Generator(np.random.Philox(seed))
    model = UNetModel(cfg, rng, dtype)
    model.set_dropout_rng(np.random.Generator(np.random.Philox([seed, 1])))
    return model


def forward(model: UNetModel, images, mode: str = "eval"):
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return model.forward(images, training=(mode == "train"))


__all__ = ["ModelConfig", "UNetModel", "ConfigError", "build_model", "forward", "param_count"]

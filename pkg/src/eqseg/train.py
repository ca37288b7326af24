"""Training loop, run configuration and checkpoint round-trips."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import checkpoint as ckpt
from .data import load_dataset, select, stack
from .layers import FieldBatchNorm
from .metrics import evaluate
from .model import ConfigError, ModelConfig, UNetModel, build_model
from .tensor import bce_with_logits, softmax_cross_entropy

log = logging.getLogger(__name__)

_MODEL_KEYS = [f.name for f in fields(ModelConfig)]


@dataclass
class TrainConfig:
    variant: str = "equivariant"
    group_n: int = 8
    image_size: int = 64
    widths: Tuple[int, ...] = (8, 16, 32, 64, 64)
    num_classes: int = 4
    dropout_p: float = 0.1
    head: str = "invariant_pool"
    mlp_hidden: Tuple[int, ...] = (64, 32)
    kernel_size: int = 3
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.0
    epochs: int = 30
    batch_size: int = 16
    class_weight: float = 1.0
    seed: int = 0
    data: str = "data"
    out: str = "runs/default"

    def __post_init__(self):
        if self.class_weight < 0:
            raise ConfigError(f"class_weight must be >= 0, got {self.class_weight}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2 for batch normalization, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        self.model_config()

    def model_config(self) -> ModelConfig:
        return ModelConfig(**{k: getattr(self, k) for k in _MODEL_KEYS})

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        defaults = cls()
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            current = getattr(defaults, key)
            try:
                if isinstance(current, tuple):
                    values[key] = tuple(int(x) for x in value.split(",") if x.strip())
                elif isinstance(current, bool):
                    values[key] = value.lower() in ("1", "true", "yes")
                elif isinstance(current, int):
                    values[key] = int(value)
                elif isinstance(current, float):
                    values[key] = float(value)
                else:
                    values[key] = value
            except ValueError:
                raise ConfigError(f"line {lineno}: bad value {value!r} for {key}") from None
        return cls(**values)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_text(Path(path).read_text())


class TrainingDivergedError(RuntimeError):
    pass


class Adam:
    """Adam with bias correction; ``weight_decay`` is added to the gradient (L2)."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self):
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def compute_loss(model: UNetModel, images, masks, labels, class_weight: float, training: bool = True):
    seg, cls = model.forward(images, training=training)
    seg_loss = bce_with_logits(seg, masks)
    cls_loss = softmax_cross_entropy(cls, labels)
    return seg_loss + cls_loss * class_weight, seg_loss, cls_loss


def recalibrate_batchnorm(model: UNetModel, samples, batch_size: int):
    """Replace the running batchnorm statistics by their average over ``samples``.

    The moving averages lag behind quickly changing weights, which makes
    eval-mode predictions noticeably worse than train-mode ones early in
    training. Dropout stays off during the pass.
    """
    bns = [m for m in model.modules() if isinstance(m, FieldBatchNorm)]
    momentum = [b.momentum for b in bns]
    sums = [(np.zeros_like(b.stats.mean), np.zeros_like(b.stats.var)) for b in bns]
    model.eval()
    for b in bns:
        b.training, b.momentum = True, 1.0
    seen = 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        if len(chunk) < 2:
            continue
        images, _, _ = stack(chunk)
        model.forward(images)
        for (m, v), b in zip(sums, bns):
            m += len(chunk) * b.stats.mean
            v += len(chunk) * b.stats.var
        seen += len(chunk)
    for (m, v), b, mom in zip(sums, bns, momentum):
        if seen:
            b.stats.mean[...] = m / seen
            b.stats.var[...] = v / seen
        b.momentum = mom
    model.eval()


@dataclass
class TrainResult:
    model: UNetModel
    history: List[Dict[str, float]]
    best_epoch: int
    checkpoint_path: Path
    log_path: Path


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def train(cfg: TrainConfig, samples=None, split=None) -> TrainResult:
    """Optimize ``bce(seg) + class_weight * cross_entropy(class)`` with Adam.

    Writes ``checkpoint.eqsg`` (best validation score, mean of classification
    and balanced segmentation accuracy), ``train.log`` and ``metrics.txt``
    under ``cfg.out``. Given the config, seed and dataset bytes every output
    is reproducible byte for byte.
    """
    if samples is None:
        samples, split = load_dataset(cfg.data)
    train_set = select(samples, split.train)
    val_set = select(samples, split.val)
    if len(train_set) < 2:
        raise ValueError("training split needs at least 2 samples")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    model = build_model(cfg.model_config(), cfg.seed)
    opt = Adam(model.parameters(), cfg.lr, (cfg.beta1, cfg.beta2), weight_decay=cfg.weight_decay)
    config_text = cfg.to_text()
    lines = ["# config", *config_text.splitlines(), "# epochs"]
    history = []
    best = (-1.0, 0)
    best_state = None

    for epoch in range(1, cfg.epochs + 1):
        model.train()
        order = np.random.Generator(np.random.Philox([cfg.seed, 2, epoch])).permutation(len(train_set))
        totals = np.zeros(3)
        steps = 0
        for step, start in enumerate(range(0, len(order), cfg.batch_size), 1):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue
            images, masks, labels = stack([train_set[i] for i in idx])
            opt.zero_grad()
            loss, seg_loss, cls_loss = compute_loss(model, images, masks, labels, cfg.class_weight)
            if not math.isfinite(float(loss.data)):
                raise TrainingDivergedError(f"non-finite loss {float(loss.data)} at epoch {epoch}, step {step}")
            loss.backward()
            opt.step()
            totals += (float(loss.data), float(seg_loss.data), float(cls_loss.data))
            steps += 1
        totals /= max(steps, 1)
        recalibrate_batchnorm(model, train_set, cfg.batch_size)

        tr = evaluate(model, train_set, cfg.batch_size)
        row = {"epoch": epoch, "loss": totals[0], "seg_loss": totals[1], "cls_loss": totals[2],
               "train_acc": tr.classification_accuracy, "train_seg": tr.balanced_seg_accuracy}
        if val_set:
            va = evaluate(model, val_set, cfg.batch_size)
            row.update(val_acc=va.classification_accuracy, val_seg=va.balanced_seg_accuracy)
            score = (va.classification_accuracy + va.balanced_seg_accuracy) / 2
        else:
            score = (tr.classification_accuracy + tr.balanced_seg_accuracy) / 2
        history.append(row)
        line = f"epoch {epoch} " + " ".join(f"{k} {_fmt(v)}" for k, v in row.items() if k != "epoch")
        lines.append(line)
        log.info(line)
        if score > best[0]:
            best = (score, epoch)
            best_state = ckpt.model_arrays(model)
            best_state = ([(n, a.copy()) for n, a in best_state[0]], [(n, a.copy()) for n, a in best_state[1]])

    best_row = history[best[1] - 1]
    metrics_text = "".join(f"{k} = {v if k == 'epoch' else _fmt(v)}\n" for k, v in best_row.items())
    ckpt_path = out / "checkpoint.eqsg"
    ckpt_path.write_bytes(ckpt.encode(config_text, best_state[0], best_state[1], metrics_text))
    lines.append(f"# best epoch {best[1]}")
    log_path = out / "train.log"
    log_path.write_text("\n".join(lines) + "\n")
    (out / "metrics.txt").write_text(metrics_text)
    return TrainResult(model, history, best[1], ckpt_path, log_path)


def load_checkpoint(path) -> Tuple[UNetModel, TrainConfig, Dict[str, str]]:
    """Rebuild the model stored at ``path``."""
    data = Path(path).read_bytes()
    config_text, params, buffers, metrics_text = ckpt.decode(data)
    cfg = TrainConfig.from_text(config_text)
    model = build_model(cfg.model_config(), cfg.seed)
    ckpt.load_state(model, params, buffers)
    model.eval()
    metrics = {}
    for line in metrics_text.splitlines():
        if "=" in line:
            k, v = (s.strip() for s in line.split("=", 1))
            metrics[k] = v
    return model, cfg, metrics


def save_checkpoint(path, model: UNetModel, cfg: TrainConfig, metrics: Optional[Dict[str, str]] = None) -> Path:
    metrics_text = "".join(f"{k} = {v}\n" for k, v in (metrics or {}).items())
    return ckpt.save_checkpoint(path, model, cfg.to_text(), metrics_text)

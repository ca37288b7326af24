"""Classification accuracy, balanced segmentation accuracy and rotation diagnostics.

A pixel is predicted as deforestation when its logit is positive, i.e. when
the sigmoid probability exceeds 0.5.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from .group import rotate_by_angle


def classification_accuracy(preds: Sequence[int], labels: Sequence[int]) -> float:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.size == 0:
        raise ValueError("classification_accuracy of an empty set is undefined")
    if preds.shape != labels.shape:
        raise ValueError(f"preds {preds.shape} and labels {labels.shape} differ in length")
    return int(np.count_nonzero(preds == labels)) / preds.size


def per_class_accuracy(preds, labels, num_classes: int = 4) -> List[float]:
    """Recall per class; NaN for classes absent from ``labels``."""
    preds, labels = np.asarray(preds), np.asarray(labels)
    out = []
    for c in range(num_classes):
        sel = labels == c
        n = int(sel.sum())
        out.append(int(np.count_nonzero(preds[sel] == c)) / n if n else float("nan"))
    return out


def threshold(logits: np.ndarray) -> np.ndarray:
    return (np.asarray(logits) > 0).astype(np.uint8)


def balanced_seg_accuracy(pred_mask, true_mask) -> float:
    """Mean of the true-positive and true-negative rates for one sample.

    When the true mask has no negatives the score is the true-positive rate.
    """
    pred = np.asarray(pred_mask).astype(bool)
    true = np.asarray(true_mask).astype(bool)
    if pred.shape != true.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {true.shape}")
    pos = int(true.sum())
    if pos == 0:
        raise ValueError("true mask has no positive pixels")
    neg = true.size - pos
    tp = int(np.count_nonzero(pred & true))
    tn = int(np.count_nonzero(~pred & ~true))
    if neg == 0:
        return tp / pos
    return (tp * neg + tn * pos) / (2 * pos * neg)


def dataset_seg_accuracy(pred_masks: Iterable, true_masks: Iterable, pooled: bool = False) -> float:
    """Balanced accuracy over a dataset.

    Default: unweighted mean of per-sample scores. ``pooled=True`` counts
    all pixels of all samples together instead.
    """
    preds, trues = list(pred_masks), list(true_masks)
    if not preds or len(preds) != len(trues):
        raise ValueError("need equally many (>0) predicted and true masks")
    if not pooled:
        return float(np.mean([balanced_seg_accuracy(p, t) for p, t in zip(preds, trues)]))
    p = np.concatenate([np.asarray(x).astype(bool).ravel() for x in preds])
    t = np.concatenate([np.asarray(x).astype(bool).ravel() for x in trues])
    return balanced_seg_accuracy(p, t)


def equivariance_error(model, images: np.ndarray, angles: Sequence[float]) -> Dict[float, float]:
    """Max-abs gap between rotating the segmentation logits and segmenting the rotated input.

    Quarter-turn angles compare on the full grid. Other angles use bilinear
    resampling and compare only inside the inscribed disc, where neither side
    sees zero fill.
    """
    images = np.asarray(images, dtype=model.dtype)
    base, _ = model.forward(images, training=False)
    base = base.data
    h, w = base.shape[-2:]
    yy, xx = np.mgrid[0:h, 0:w]
    disc = np.hypot(yy - (h - 1) / 2, xx - (w - 1) / 2) <= min(h, w) / 2 - 2
    out = {}
    for angle in angles:
        angle = float(angle)
        if angle % 360 == 0:
            out[angle] = 0.0
            continue
        rotated_in = rotate_by_angle(images, angle).astype(model.dtype)
        seg, _ = model.forward(rotated_in, training=False)
        diff = np.abs(rotate_by_angle(base, angle) - seg.data)
        if angle % 90:
            diff = diff[..., disc]
        out[angle] = float(diff.max())
    return out


@dataclass
class EvalReport:
    classification_accuracy: float
    balanced_seg_accuracy: float
    per_class_accuracy: List[float]
    n_samples: int
    equivariance_errors: Dict[float, float] = field(default_factory=dict)
    extra: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.n_samples <= 0:
            raise ValueError("EvalReport needs at least one sample")
        for v in (self.classification_accuracy, self.balanced_seg_accuracy):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"fraction out of range: {v}")

    def items(self) -> List[tuple]:
        rows = [("n_samples", str(self.n_samples)),
                ("classification_accuracy", f"{self.classification_accuracy:.6f}"),
                ("balanced_seg_accuracy", f"{self.balanced_seg_accuracy:.6f}")]
        for c, a in enumerate(self.per_class_accuracy):
            rows.append((f"class_{c}_accuracy", "nan" if np.isnan(a) else f"{a:.6f}"))
        for angle, err in sorted(self.equivariance_errors.items()):
            rows.append((f"equivariance_error_{angle:g}", f"{err:.6e}"))
        rows.extend(sorted(self.extra.items()))
        return rows

    def to_keyvalue(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items())

    def to_table(self) -> str:
        rows = self.items()
        width = max(len(k) for k, _ in rows)
        return "\n".join(f"{k.ljust(width)}  {v}" for k, v in rows)


def evaluate(model, samples, batch_size: int = 16, pooled: bool = False,
             angles: Optional[Sequence[float]] = None) -> EvalReport:
    """Run ``model`` in eval mode over ``samples`` and score both heads."""
    from .data import stack

    preds, seg_preds = [], []
    for i in range(0, len(samples), batch_size):
        images, _, _ = stack(samples[i:i + batch_size])
        seg, cls = model.forward(images, training=False)
        preds.extend(cls.data.argmax(axis=1).tolist())
        seg_preds.extend(threshold(seg.data))
    labels = [int(s.label) for s in samples]
    errors = {}
    if angles:
        images, _, _ = stack(samples[:batch_size])
        errors = equivariance_error(model, images, angles)
    return EvalReport(
        classification_accuracy=classification_accuracy(preds, labels),
        balanced_seg_accuracy=dataset_seg_accuracy(seg_preds, [s.mask for s in samples], pooled),
        per_class_accuracy=per_class_accuracy(preds, labels),
        n_samples=len(samples),
        equivariance_errors=errors,
    )

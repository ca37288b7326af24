"""Deforestation samples: label vocabulary, synthetic scenes, directory I/O, rotated test sets.

Directory layout::

    images/<id>.png        3-channel 8-bit PNG
    masks/<id>.png         1-channel 8-bit PNG, 0 background, 255 deforestation
    labels.csv             header ``id,category``
    splits/{train,val,test}.txt   one id per line

Randomness comes from numpy's Philox (a 64-bit counter-based generator)
keyed by ``(seed, sample index)``, so generation does not depend on platform
or on how many samples were drawn before.
"""
from __future__ import annotations

import csv
import enum
import hashlib
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np
from PIL import Image
from scipy import ndimage

from .group import rotate_by_angle


class DriverLabel(enum.IntEnum):
    PLANTATION = 0
    GRASSLAND_SHRUBLAND = 1
    SMALLHOLDER_AGRICULTURE = 2
    OTHER = 3

    @property
    def display_name(self) -> str:
        return DRIVER_NAMES[self]


DRIVER_NAMES = {
    DriverLabel.PLANTATION: "Plantation",
    DriverLabel.GRASSLAND_SHRUBLAND: "Grassland/shrubland",
    DriverLabel.SMALLHOLDER_AGRICULTURE: "Smallholder agriculture",
    DriverLabel.OTHER: "Other",
}

EXPERT_CATEGORIES: Dict[str, DriverLabel] = {
    "Oil palm plantation": DriverLabel.PLANTATION,
    "Timber plantation": DriverLabel.PLANTATION,
    "Other large-scale plantations": DriverLabel.PLANTATION,
    "Grassland/shrubland": DriverLabel.GRASSLAND_SHRUBLAND,
    "Small-scale agriculture": DriverLabel.SMALLHOLDER_AGRICULTURE,
    "Small-scale mixed plantation": DriverLabel.SMALLHOLDER_AGRICULTURE,
    "Small-scale oil palm plantation": DriverLabel.SMALLHOLDER_AGRICULTURE,
    "Mining": DriverLabel.OTHER,
    "Fish pond": DriverLabel.OTHER,
    "Logging road": DriverLabel.OTHER,
    "Secondary forest": DriverLabel.OTHER,
    "Other": DriverLabel.OTHER,
}


class UnknownCategoryError(LookupError):
    pass


class DatasetIntegrityError(Exception):
    def __init__(self, sample_id: str, message: str):
        super().__init__(f"sample {sample_id!r}: {message}")
        self.sample_id = sample_id


class SampleValidationError(ValueError):
    def __init__(self, sample_id: str, message: str):
        super().__init__(f"sample {sample_id!r}: {message}")
        self.sample_id = sample_id


def map_expert_category(category: str) -> DriverLabel:
    """Driver group for one of the 11 expert-labelled categories."""
    try:
        return EXPERT_CATEGORIES[category]
    except KeyError:
        valid = ", ".join(repr(c) for c in EXPERT_CATEGORIES)
        raise UnknownCategoryError(f"unknown expert category {category!r}; valid: {valid}") from None


def parse_category(category: str) -> DriverLabel:
    """Accept either an expert category or a driver-group name."""
    if category in EXPERT_CATEGORIES:
        return EXPERT_CATEGORIES[category]
    for label, name in DRIVER_NAMES.items():
        if category == name:
            return label
    valid = sorted(set(EXPERT_CATEGORIES) | set(DRIVER_NAMES.values()))
    raise UnknownCategoryError(f"unknown category {category!r}; valid: {', '.join(map(repr, valid))}")


@dataclass(frozen=True)
class Sample:
    id: str
    image: np.ndarray  # [3, H, W] float32 in [0, 1]
    mask: np.ndarray   # [1, H, W] uint8 in {0, 1}
    label: DriverLabel

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[0] != 3:
            raise SampleValidationError(self.id, f"image must be [3, H, W], got {self.image.shape}")
        if self.mask.shape != (1,) + self.image.shape[1:]:
            raise SampleValidationError(self.id, f"mask shape {self.mask.shape} does not match image "
                                                 f"{self.image.shape[1:]}")
        if not self.mask.any():
            raise SampleValidationError(self.id, "mask has no deforestation pixels")


@dataclass
class DatasetSplit:
    train: List[str] = field(default_factory=list)
    val: List[str] = field(default_factory=list)
    test: List[str] = field(default_factory=list)

    def __getitem__(self, name: str) -> List[str]:
        if name not in ("train", "val", "test"):
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)


# ---------------------------------------------------------------- synthetic scenes

_SOIL = np.array([0.56, 0.43, 0.29])
_PALM = np.array([0.24, 0.42, 0.14])
_GRASS = np.array([0.58, 0.62, 0.31])
_ROAD = np.array([0.66, 0.60, 0.52])
_WATER = np.array([0.22, 0.30, 0.42])
_CROPS = np.array([[0.62, 0.50, 0.32], [0.70, 0.68, 0.38], [0.45, 0.55, 0.25], [0.52, 0.38, 0.27]])
_FOREST = np.array([0.12, 0.29, 0.11])


def _rng(seed: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=[seed & (2**64 - 1), index]))


def _smooth_noise(rng, shape, sigma) -> np.ndarray:
    n = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    return n / (n.std() + 1e-12)


def _forest(rng, s) -> np.ndarray:
    canopy = _smooth_noise(rng, (s, s), 1.5)
    img = _FOREST[:, None, None] * (1 + 0.25 * canopy) + 0.015 * rng.standard_normal((3, s, s))
    return img


def _paint(img, mask, colour, rng, texture=0.04):
    tex = 1 + texture * rng.standard_normal(mask.shape)
    for c in range(3):
        img[c][mask] = (colour[c] * tex)[mask]


def _plantation(rng, s, img, yy, xx):
    h, w = rng.uniform(0.35, 0.55) * s, rng.uniform(0.25, 0.45) * s
    cy, cx = rng.uniform(0.35, 0.65, 2) * s
    th = rng.uniform(0, np.pi)
    u = (xx - cx) * np.cos(th) + (yy - cy) * np.sin(th)
    v = -(xx - cx) * np.sin(th) + (yy - cy) * np.cos(th)
    mask = (np.abs(u) <= w / 2) & (np.abs(v) <= h / 2)
    rows = (np.floor(v / 2.0) % 2) == 0
    _paint(img, mask & rows, _PALM, rng)
    _paint(img, mask & ~rows, _SOIL, rng)
    return mask


def _grassland(rng, s, img, yy, xx):
    cy, cx = rng.uniform(0.35, 0.65, 2) * s
    r0 = rng.uniform(0.18, 0.28) * s
    phi = np.arctan2(yy - cy, xx - cx)
    r = np.ones_like(phi)
    for k in (2, 3, 4):
        r += rng.uniform(0.0, 0.12) * np.cos(k * phi + rng.uniform(0, 2 * np.pi))
    mask = np.hypot(yy - cy, xx - cx) <= r0 * r
    shade = 1 + 0.08 * _smooth_noise(rng, (s, s), 3.0)
    for c in range(3):
        img[c][mask] = (_GRASS[c] * shade)[mask]
    return mask


def _smallholder(rng, s, img, yy, xx):
    mask = np.zeros((s, s), dtype=bool)
    for _ in range(rng.integers(3, 7)):
        cy, cx = rng.uniform(0.12, 0.88, 2) * s
        a, b = rng.uniform(0.04, 0.08, 2) * s
        th = rng.uniform(0, np.pi)
        u = (xx - cx) * np.cos(th) + (yy - cy) * np.sin(th)
        v = -(xx - cx) * np.sin(th) + (yy - cy) * np.cos(th)
        patch = (np.abs(u) <= a) & (np.abs(v) <= b)
        _paint(img, patch, _CROPS[rng.integers(len(_CROPS))], rng, texture=0.06)
        mask |= patch
    return mask


def _other(rng, s, img, yy, xx):
    if rng.random() < 0.5:
        # road: gently curved stroke across most of the scene
        th = rng.uniform(0, np.pi)
        cy, cx = rng.uniform(0.4, 0.6, 2) * s
        u = (xx - cx) * np.cos(th) + (yy - cy) * np.sin(th)
        v = -(xx - cx) * np.sin(th) + (yy - cy) * np.cos(th)
        bend = rng.uniform(-0.01, 0.01)
        width = rng.uniform(1.0, 1.6)
        mask = (np.abs(v - bend * u ** 2) <= width) & (np.abs(u) <= rng.uniform(0.3, 0.45) * s)
        _paint(img, mask, _ROAD, rng)
    else:
        cy, cx = rng.uniform(0.25, 0.75, 2) * s
        r = rng.uniform(0.05, 0.09) * s
        mask = np.hypot(yy - cy, xx - cx) <= r
        _paint(img, mask, _WATER, rng, texture=0.03)
    return mask


_PAINTERS = {
    DriverLabel.PLANTATION: _plantation,
    DriverLabel.GRASSLAND_SHRUBLAND: _grassland,
    DriverLabel.SMALLHOLDER_AGRICULTURE: _smallholder,
    DriverLabel.OTHER: _other,
}


def synthetic_scene(label: DriverLabel, size: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """One ``(image [3,S,S] in [0,1], mask [S,S] bool)`` pair for ``label``."""
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    img = _forest(rng, size)
    mask = _PAINTERS[label](rng, size, img, yy, xx)
    if not mask.any():  # degenerate draw; fall back to a central square
        c = size // 2
        mask[c - 2:c + 2, c - 2:c + 2] = True
        _paint(img, mask, _SOIL, rng)
    return np.clip(img, 0.0, 1.0), mask


def _write_png(path: Path, array: np.ndarray):
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG")
    path.write_bytes(buf.getvalue())


def split_ids(ids: Sequence[str], fractions=(0.70, 0.15)) -> DatasetSplit:
    """Deterministic 70/15/15 split ordered by the SHA-256 of each id."""
    order = sorted(ids, key=lambda i: hashlib.sha256(i.encode()).hexdigest())
    n = len(order)
    n_train = max(1, int(n * fractions[0]))
    n_val = max(1, int(n * fractions[1])) if n >= 3 else 0
    n_train = min(n_train, max(n - n_val - 1, 1))
    return DatasetSplit(sorted(order[:n_train]), sorted(order[n_train:n_train + n_val]),
                        sorted(order[n_train + n_val:]))


def generate_synthetic(n: int, size: int, seed: int, out_dir) -> Path:
    """Write ``n`` class-balanced synthetic samples in the dataset layout."""
    if n < 4:
        raise ValueError(f"need at least 4 samples, got {n}")
    if size < 32:
        raise ValueError(f"image size must be at least 32, got {size}")
    out = Path(out_dir)
    try:
        (out / "images").mkdir(parents=True, exist_ok=True)
        (out / "masks").mkdir(parents=True, exist_ok=True)
        (out / "splits").mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create dataset directory {out}: {e}") from e

    labels = np.arange(n) % 4
    _rng(seed, n + 1).shuffle(labels)
    experts = {g: [c for c, l in EXPERT_CATEGORIES.items() if l == g] for g in DriverLabel}
    ids, rows = [], []
    for i in range(n):
        sid = f"{i:05d}"
        rng = _rng(seed, i)
        label = DriverLabel(int(labels[i]))
        img, mask = synthetic_scene(label, size, rng)
        category = experts[label][rng.integers(len(experts[label]))]
        _write_png(out / "images" / f"{sid}.png",
                   np.round(img.transpose(1, 2, 0) * 255).astype(np.uint8))
        _write_png(out / "masks" / f"{sid}.png", (mask * 255).astype(np.uint8))
        ids.append(sid)
        rows.append((sid, category))

    with open(out / "labels.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["id", "category"])
        w.writerows(rows)
    split = split_ids(ids)
    for name in ("train", "val", "test"):
        (out / "splits" / f"{name}.txt").write_text("".join(f"{i}\n" for i in split[name]))
    return out


# ---------------------------------------------------------------- loading

def read_image(path) -> np.ndarray:
    """RGB PNG as float32 [3, H, W] in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr.transpose(2, 0, 1).copy()


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return (arr > 127).astype(np.uint8)[None]


def load_dataset(root) -> Tuple[List[Sample], DatasetSplit]:
    """Decode and validate every sample listed in ``labels.csv``."""
    root = Path(root)
    labels_path = root / "labels.csv"
    if not labels_path.is_file():
        raise FileNotFoundError(f"missing {labels_path}")
    with open(labels_path, newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or [c.strip() for c in reader.fieldnames[:2]] != ["id", "category"]:
            raise ValueError(f"{labels_path}: header must be 'id,category'")
        rows = [(r["id"].strip(), r["category"].strip()) for r in reader]

    samples = []
    for sid, category in rows:
        try:
            label = parse_category(category)
        except UnknownCategoryError as e:
            raise UnknownCategoryError(f"sample {sid!r}: {e}") from None
        img_path, mask_path = root / "images" / f"{sid}.png", root / "masks" / f"{sid}.png"
        if not img_path.is_file():
            raise DatasetIntegrityError(sid, f"missing image {img_path}")
        if not mask_path.is_file():
            raise DatasetIntegrityError(sid, f"missing mask {mask_path}")
        samples.append(Sample(sid, read_image(img_path), read_mask(mask_path), label))

    known = {s.id for s in samples}
    split = DatasetSplit()
    for name in ("train", "val", "test"):
        path = root / "splits" / f"{name}.txt"
        if not path.is_file():
            raise FileNotFoundError(f"missing split file {path}")
        ids = [line.strip() for line in path.read_text().splitlines() if line.strip()]
        for sid in ids:
            if sid not in known:
                raise DatasetIntegrityError(sid, f"listed in {name}.txt but absent from labels.csv")
        setattr(split, name, ids)
    seen: Dict[str, str] = {}
    for name in ("train", "val", "test"):
        for sid in split[name]:
            if sid in seen:
                raise SampleValidationError(sid, f"appears in both {seen[sid]} and {name} splits")
            seen[sid] = name
    for sid in known - set(seen):
        raise SampleValidationError(sid, "not assigned to any split")
    return samples, split


def select(samples: Sequence[Sample], ids: Sequence[str]) -> List[Sample]:
    by_id = {s.id: s for s in samples}
    return [by_id[i] for i in ids]


def stack(samples: Sequence[Sample]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batch arrays ``(images [B,3,H,W] f32, masks [B,1,H,W] f32, labels [B])``."""
    images = np.stack([s.image for s in samples]).astype(np.float32)
    masks = np.stack([s.mask for s in samples]).astype(np.float32)
    labels = np.array([int(s.label) for s in samples], dtype=np.int64)
    return images, masks, labels


# ---------------------------------------------------------------- rotation

def rotate_sample(sample: Sample, quarter_turns: int) -> Sample:
    k = quarter_turns % 4
    return Sample(sample.id, np.ascontiguousarray(np.rot90(sample.image, k, axes=(1, 2))),
                  np.ascontiguousarray(np.rot90(sample.mask, k, axes=(1, 2))), sample.label)


def _rotate_nearest(mask: np.ndarray, degrees: float) -> np.ndarray:
    h, w = mask.shape[-2:]
    cy, cx = (h - 1) / 2, (w - 1) / 2
    th = np.deg2rad(degrees)
    ii, jj = np.mgrid[0:h, 0:w]
    u, v = jj - cx, cy - ii
    su, sv = np.cos(th) * u + np.sin(th) * v, -np.sin(th) * u + np.cos(th) * v
    si, sj = np.rint(cy - sv).astype(int), np.rint(su + cx).astype(int)
    ok = (si >= 0) & (si < h) & (sj >= 0) & (sj < w)
    out = np.zeros_like(mask)
    out[..., ok] = mask[..., si[ok], sj[ok]]
    return out


def rotated_test_set(samples: Sequence[Sample], mode: str = "quarter", seed: int = 0) -> List[Sample]:
    """Rotate every sample independently.

    ``quarter``: a random multiple of 90 degrees, exact. ``arbitrary``: a
    uniform angle, bilinear for images and nearest-neighbour for masks; a
    draw that would push the whole mask off the grid falls back to the
    nearest quarter turn.
    """
    if not samples:
        raise ValueError("rotated_test_set needs at least one sample")
    rng = np.random.Generator(np.random.Philox(seed))
    out = []
    for s in samples:
        if mode == "quarter":
            out.append(rotate_sample(s, int(rng.integers(4))))
        elif mode == "arbitrary":
            deg = float(rng.uniform(0.0, 360.0))
            mask = _rotate_nearest(s.mask, deg)
            if not mask.any():
                out.append(rotate_sample(s, int(round(deg / 90.0))))
                continue
            img = np.clip(rotate_by_angle(s.image.astype(np.float64), deg), 0, 1).astype(np.float32)
            out.append(Sample(s.id, img, mask, s.label))
        else:
            raise ValueError(f"rotation mode must be 'quarter' or 'arbitrary', got {mode!r}")
    return out

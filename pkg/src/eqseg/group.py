"""Finite rotation and rotation-reflection groups acting on images and feature fields.

Conventions
-----------
* Rotations are counterclockwise as displayed (row axis pointing down),
  about the grid centre ``((H-1)/2, (W-1)/2)``.
* Quarter turns are exact index permutations (``np.rot90``); any other
  angle is bilinear resampling with zero fill, applied after splitting off
  the largest whole number of quarter turns.
* A dihedral element ``(r, s)`` first mirrors left-right when ``s`` is set,
  then rotates by ``r`` steps of ``2*pi/N``.
* The regular representation acts by left translation, ``rho(g) e_h = e_{gh}``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Dict, Sequence, Tuple

import numpy as np

from .tensor import Tensor


@dataclass(frozen=True)
class GroupElement:
    rotation: int
    reflect: bool = False
    n: int = 1

    @property
    def angle(self) -> float:
        """Rotation angle in radians."""
        return 2 * np.pi * self.rotation / self.n

    @property
    def degrees(self) -> float:
        return 360.0 * self.rotation / self.n

    @property
    def is_quarter_turn(self) -> bool:
        return (4 * self.rotation) % self.n == 0


@dataclass(frozen=True)
class GroupSpec:
    kind: str
    n: int

    def __post_init__(self):
        if self.kind not in ("cyclic", "dihedral"):
            raise ValueError(f"unknown group kind {self.kind!r}; use 'cyclic' or 'dihedral'")
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ValueError(f"group order must be a positive integer, got {self.n!r}")

    @cached_property
    def elements(self) -> Tuple[GroupElement, ...]:
        flips = (False, True) if self.kind == "dihedral" else (False,)
        return tuple(GroupElement(r, s, self.n) for s in flips for r in range(self.n))

    @property
    def order(self) -> int:
        return len(self.elements)

    @property
    def identity(self) -> GroupElement:
        return GroupElement(0, False, self.n)

    @property
    def name(self) -> str:
        return f"{'C' if self.kind == 'cyclic' else 'D'}{self.n}"

    def index(self, g: GroupElement) -> int:
        return g.rotation + (self.n if g.reflect else 0)

    def compose(self, a: GroupElement, b: GroupElement) -> GroupElement:
        """The product ``a * b`` (apply ``b`` first)."""
        r = (a.rotation + (-b.rotation if a.reflect else b.rotation)) % self.n
        return GroupElement(r, a.reflect != b.reflect, self.n)

    def inverse(self, g: GroupElement) -> GroupElement:
        if g.reflect:
            return g
        return GroupElement((-g.rotation) % self.n, False, self.n)

    def element(self, rotation: int, reflect: bool = False) -> GroupElement:
        if reflect and self.kind != "dihedral":
            raise ValueError(f"{self.name} has no reflections")
        return GroupElement(rotation % self.n, bool(reflect), self.n)

    def __repr__(self):
        return f"GroupSpec({self.name})"


def make_group(kind: str, n: int) -> GroupSpec:
    """Build C_n (``kind='cyclic'``) or D_n (``kind='dihedral'``)."""
    return GroupSpec(kind, n)


@dataclass(frozen=True, eq=False)
class Representation:
    group: GroupSpec
    dim: int
    kind: str
    matrices: Dict[GroupElement, np.ndarray] = field(repr=False)
    parts: Tuple["Representation", ...] = field(default=(), repr=False)

    @property
    def key(self):
        if self.kind == "direct_sum":
            return (self.group, "direct_sum", tuple(p.key for p in self.parts))
        return (self.group, self.kind)

    def __eq__(self, other):
        return isinstance(other, Representation) and self.key == other.key

    def __hash__(self):
        return hash(self.key)

    def __call__(self, g: GroupElement) -> np.ndarray:
        return self.matrices[g]


@lru_cache(maxsize=None)
def trivial_rep(group: GroupSpec) -> Representation:
    one = np.ones((1, 1))
    return Representation(group, 1, "trivial", {g: one for g in group.elements})


@lru_cache(maxsize=None)
def regular_rep(group: GroupSpec) -> Representation:
    """Permutation representation of left translation on the group itself."""
    els = group.elements
    m = len(els)
    mats = {}
    for g in els:
        p = np.zeros((m, m))
        for j, h in enumerate(els):
            p[group.index(group.compose(g, h)), j] = 1.0
        mats[g] = p
    return Representation(group, m, "regular", mats)


def direct_sum(reps: Sequence[Representation]) -> Representation:
    reps = list(reps)
    if not reps:
        raise ValueError("direct_sum needs at least one representation")
    group = reps[0].group
    if any(r.group != group for r in reps):
        raise ValueError("direct_sum: representations belong to different groups")
    if len(reps) == 1:
        return reps[0]
    dim = sum(r.dim for r in reps)
    mats = {}
    for g in group.elements:
        m = np.zeros((dim, dim))
        o = 0
        for r in reps:
            m[o:o + r.dim, o:o + r.dim] = r(g)
            o += r.dim
        mats[g] = m
    return Representation(group, dim, "direct_sum", mats, tuple(reps))


# ---------------------------------------------------------------- spatial action

def _bilinear_rotate(a: np.ndarray, theta: float) -> np.ndarray:
    """Rotate the last two axes counterclockwise by ``theta`` with bilinear sampling."""
    h, w = a.shape[-2:]
    cy, cx = (h - 1) / 2, (w - 1) / 2
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    u, v = jj - cx, cy - ii
    c, s = np.cos(theta), np.sin(theta)
    # source point = inverse rotation of the target point
    su, sv = c * u + s * v, -s * u + c * v
    si, sj = cy - sv, su + cx
    i0, j0 = np.floor(si).astype(int), np.floor(sj).astype(int)
    ti, tj = si - i0, sj - j0
    out = np.zeros(a.shape, dtype=np.result_type(a.dtype, np.float64))
    for di, wi in ((0, 1 - ti), (1, ti)):
        for dj, wj in ((0, 1 - tj), (1, tj)):
            ri, rj = i0 + di, j0 + dj
            ok = (ri >= 0) & (ri < h) & (rj >= 0) & (rj < w)
            wgt = np.where(ok, wi * wj, 0.0)
            out += a[..., np.clip(ri, 0, h - 1), np.clip(rj, 0, w - 1)] * wgt
    return out.astype(a.dtype) if np.issubdtype(a.dtype, np.floating) else out


def rotate_array(a: np.ndarray, g: GroupElement) -> np.ndarray:
    """Apply the spatial part of ``g`` to the last two axes of ``a``."""
    if g.reflect:
        a = a[..., ::-1]
    q, rem = divmod(g.rotation * 4, g.n)
    if rem:
        a = _bilinear_rotate(a, 2 * np.pi * rem / (4 * g.n))
    return np.ascontiguousarray(np.rot90(a, q % 4, axes=(-2, -1)))


def rotate_by_angle(a: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate the last two axes by an arbitrary angle (exact for quarter turns)."""
    q, rem = divmod(float(degrees), 90.0)
    if rem:
        a = _bilinear_rotate(a, np.deg2rad(rem))
    return np.ascontiguousarray(np.rot90(a, int(q) % 4, axes=(-2, -1)))


# ---------------------------------------------------------------- fields

@dataclass(frozen=True)
class FieldType:
    group: GroupSpec
    fields: Tuple[Representation, ...]

    def __post_init__(self):
        object.__setattr__(self, "fields", tuple(self.fields))
        if any(r.group != self.group for r in self.fields):
            raise ValueError("FieldType: every field must belong to the same group")

    @property
    def total_dim(self) -> int:
        return sum(r.dim for r in self.fields)

    @property
    def size(self) -> int:
        return self.total_dim

    def __len__(self):
        return len(self.fields)

    @cached_property
    def field_of_channel(self) -> np.ndarray:
        """Index of the owning field for every channel."""
        return np.repeat(np.arange(len(self.fields)), [r.dim for r in self.fields])

    @cached_property
    def channel_slices(self) -> Tuple[slice, ...]:
        out, o = [], 0
        for r in self.fields:
            out.append(slice(o, o + r.dim))
            o += r.dim
        return tuple(out)

    @cached_property
    def representation(self) -> Representation:
        return direct_sum(self.fields)

    def __add__(self, other: "FieldType") -> "FieldType":
        if other.group != self.group:
            raise ValueError("cannot concatenate field types of different groups")
        return FieldType(self.group, self.fields + other.fields)

    def __repr__(self):
        names = [r.kind for r in self.fields]
        return f"FieldType({self.group.name}, {names})"


@dataclass
class GeometricTensor:
    tensor: Tensor
    field_type: FieldType

    def __post_init__(self):
        if not isinstance(self.tensor, Tensor):
            self.tensor = Tensor(self.tensor)
        if self.tensor.ndim != 4 or self.tensor.shape[1] != self.field_type.total_dim:
            raise ValueError(f"tensor shape {self.tensor.shape} does not carry "
                             f"{self.field_type.total_dim} channels for {self.field_type}")

    @property
    def shape(self):
        return self.tensor.shape

    def transform(self, g: GroupElement) -> "GeometricTensor":
        return transform_field(self, g)


def transform_field(x: GeometricTensor, g: GroupElement) -> GeometricTensor:
    """Rotate the spatial grid by ``g`` and mix every fibre by ``rho(g)``.

    Returns an untracked tensor; the action is used for checking, not training.
    """
    data = rotate_array(x.tensor.data, g)
    rho = x.field_type.representation(g)
    if np.all(rho.sum(axis=1) == 1) and np.all((rho == 0) | (rho == 1)):
        data = data[:, rho.argmax(axis=1)]
    else:
        data = np.einsum("ij,bjhw->bihw", rho.astype(data.dtype), data)
    return GeometricTensor(Tensor(data), x.field_type)

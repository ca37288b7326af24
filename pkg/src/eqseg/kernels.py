"""Bases of steerable convolution kernels.

A kernel ``K`` mapping fields of type ``in_type`` to ``out_type`` is
equivariant when ``K(g y) = rho_out(g) K(y) rho_in(g)^-1`` for every group
element ``g`` and kernel offset ``y``. The group average

    P(K) = 1/|G| sum_g rho_out(g)^-1 K(g y) rho_in(g)

maps any kernel into that subspace; projecting the canonical kernels and
orthonormalizing the results gives a basis.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .group import FieldType, GroupElement, Representation, rotate_array
from .tensor import Tensor, _result


@dataclass(frozen=True)
class EquivariantBasis:
    in_type: FieldType
    out_type: FieldType
    kernel_size: int
    basis: np.ndarray  # [count, out_dim, in_dim, k, k], float64

    @property
    def count(self) -> int:
        return self.basis.shape[0]

    def __len__(self):
        return self.count


def _check_types(in_type: FieldType, out_type: FieldType, k: int):
    if in_type.group != out_type.group:
        raise ValueError(f"field types live on different groups: {in_type.group} vs {out_type.group}")
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {k}")


def kernel_action(kernel: np.ndarray, g: GroupElement, rho_in: np.ndarray, rho_out_inv: np.ndarray) -> np.ndarray:
    """``rho_out(g)^-1 K(g y) rho_in(g)`` for kernels shaped [..., out, in, k, k]."""
    g_inv = g if g.reflect else GroupElement((-g.rotation) % g.n, False, g.n)
    # K(g y) as an array over y is K spatially transformed by g^-1
    moved = rotate_array(kernel, g_inv)
    return np.einsum("oa,...abhw,bi->...oihw", rho_out_inv, moved, rho_in, optimize=True)


def constraint_residual(kernel: np.ndarray, g: GroupElement, in_type: FieldType, out_type: FieldType) -> np.ndarray:
    """``K(g y) - rho_out(g) K(y) rho_in(g)^-1``; zero for an equivariant kernel."""
    rin = in_type.representation
    rout = out_type.representation
    lhs = kernel_action(kernel, g, rin(g), np.linalg.inv(rout(g)))
    return lhs - kernel


def reynolds_project(kernel: np.ndarray, in_type: FieldType, out_type: FieldType) -> np.ndarray:
    """Average ``kernel`` over the group so it satisfies the kernel constraint.

    Accepts extra leading axes, which are projected independently.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    k = kernel.shape[-1]
    _check_types(in_type, out_type, k)
    if kernel.shape[-4:] != (out_type.total_dim, in_type.total_dim, k, k):
        raise ValueError(f"kernel shape {kernel.shape[-4:]} does not match "
                         f"({out_type.total_dim}, {in_type.total_dim}, {k}, {k})")
    group = in_type.group
    rin, rout = in_type.representation, out_type.representation
    acc = np.zeros_like(kernel)
    for g in group.elements:
        acc += kernel_action(kernel, g, rin(g), np.linalg.inv(rout(g)))
    return acc / group.order


def build_basis(in_type: FieldType, out_type: FieldType, k: int, tol: float = 1e-6) -> EquivariantBasis:
    """Orthonormal basis of the projector image via modified Gram-Schmidt.

    Vectors whose residual norm falls below ``tol`` times the largest
    projected norm are dropped.
    """
    _check_types(in_type, out_type, k)
    shape = (out_type.total_dim, in_type.total_dim, k, k)
    d = int(np.prod(shape))
    canon = np.eye(d).reshape((d,) + shape)
    proj = reynolds_project(canon, in_type, out_type).reshape(d, d)
    norms = np.linalg.norm(proj, axis=1)
    cutoff = tol * norms.max() if d else 0.0
    q = np.zeros((0, d))
    for v in proj:
        if np.linalg.norm(v) <= cutoff:
            continue
        v = v.copy()
        for u in q:  # modified Gram-Schmidt: subtract one direction at a time
            v -= (u @ v) * u
        nv = np.linalg.norm(v)
        if nv > cutoff:
            q = np.vstack([q, v / nv])
    return EquivariantBasis(in_type, out_type, k, q.reshape((q.shape[0],) + shape))


@lru_cache(maxsize=None)
def pair_basis(rep_in: Representation, rep_out: Representation, k: int) -> np.ndarray:
    """Basis array for a single input field and a single output field."""
    group = rep_in.group
    return build_basis(FieldType(group, (rep_in,)), FieldType(group, (rep_out,)), k).basis


def expand_kernel(basis: EquivariantBasis, coeffs: Tensor) -> Tensor:
    """Differentiable linear combination ``sum_i coeffs[i] * basis[i]``."""
    if coeffs.shape != (basis.count,):
        raise ValueError(f"expected {basis.count} coefficients, got shape {coeffs.shape}")
    b = basis.basis.astype(coeffs.dtype)
    flat = b.reshape(basis.count, -1)
    out = (coeffs.data @ flat).reshape(b.shape[1:])
    return _result(out, (coeffs,), lambda g: (flat @ g.reshape(-1),))

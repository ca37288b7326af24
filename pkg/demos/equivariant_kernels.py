"""
Equivariant kernel bases
========================

Averaging a kernel over the group projects it onto the kernels that commute
with rotations. Orthonormalizing the projected canonical kernels gives a
basis, and a layer only learns one coefficient per basis element.
"""
import numpy as np

from eqseg.group import FieldType, make_group, regular_rep, trivial_rep
from eqseg.kernels import build_basis, constraint_residual, reynolds_project

c4 = make_group("cyclic", 4)
scalar = FieldType(c4, [trivial_rep(c4)])
regular = FieldType(c4, [regular_rep(c4)])

# a scalar-to-scalar 3x3 kernel must look the same after every quarter turn,
# leaving three free values: centre, edge midpoints and corners
raw = np.random.default_rng(0).integers(0, 9, (1, 1, 3, 3)).astype(float)
print(raw[0, 0])
print(reynolds_project(raw, scalar, scalar)[0, 0])

for fin, fout in [(scalar, scalar), (scalar, regular), (regular, regular)]:
    basis = build_basis(fin, fout, 3)
    free = fout.total_dim * fin.total_dim * 9
    print(f"{fin!r} -> {fout!r}: {basis.count} of {free} kernel entries are free")

# every basis kernel satisfies the constraint at each quarter turn
basis = build_basis(regular, regular, 3)
worst = max(np.abs(constraint_residual(basis.basis, g, regular, regular)).max() for g in c4.elements)
print(f"largest constraint residual: {worst:.1e}")

# C8 adds 45 degree rotations, which a 3x3 grid can only approximate with
# bilinear resampling; quarter turns remain exact
c8 = make_group("cyclic", 8)
r8 = FieldType(c8, [regular_rep(c8)])
b8 = build_basis(r8, r8, 3)
for g in c8.elements[:3]:
    res = np.abs(constraint_residual(b8.basis, g, r8, r8))
    print(f"C8 {g.degrees:5.1f} deg: full grid {res.max():.2e}, centre {res[..., 1, 1].max():.2e}")

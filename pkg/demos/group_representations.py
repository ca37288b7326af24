"""
Rotations, representations and feature fields
=============================================

How a rotation acts on an image, on a stack of feature channels, and why
regular fields turn a rotation into a cyclic shift of channels.
"""
import numpy as np

from eqseg.group import (FieldType, GeometricTensor, direct_sum, make_group, regular_rep, transform_field,
                         trivial_rep)

# C8 contains the eight rotations by multiples of 45 degrees
c8 = make_group("cyclic", 8)
print(c8, [e.degrees for e in c8.elements])

# composition adds rotation indices modulo 8
a, b = c8.element(3), c8.element(7)
print("135 + 315 degrees =", c8.compose(a, b).degrees, "degrees")

# the regular representation permutes |G| channels; a quarter turn of C4
# shifts channel j to channel j + 1
c4 = make_group("cyclic", 4)
print(regular_rep(c4)(c4.element(1)).astype(int))

# an RGB image is three trivial fields: rotating it only moves pixels
rgb = FieldType(c4, [trivial_rep(c4)] * 3)
img = GeometricTensor(np.random.default_rng(0).random((1, 3, 4, 4)), rgb)
turned = transform_field(img, c4.element(1))
print("RGB rotate == rot90:", np.array_equal(turned.tensor.data, np.rot90(img.tensor.data, 1, axes=(2, 3))))

# a regular field rotates its pixels and cycles its channels
reg = FieldType(c4, [regular_rep(c4)])
x = np.zeros((1, 4, 3, 3))
x[0, 0, 1, 2] = 1.0  # channel 0, one pixel right of centre
y = transform_field(GeometricTensor(x, reg), c4.element(1)).tensor.data
c, i, j = np.argwhere(y[0])[0]
print(f"after 90 degrees the response sits in channel {c} at pixel ({i}, {j})")

# direct sums stack representations block-diagonally
mixed = direct_sum([trivial_rep(c4), regular_rep(c4)])
print(mixed(c4.element(1)).astype(int))

# quarter turns only permute entries, so nothing is lost or blurred
z = GeometricTensor(np.random.default_rng(1).random((1, 5, 6, 6)), FieldType(c4, mixed.parts))
w = transform_field(z, c4.element(3))
print("multiset preserved:", np.array_equal(np.sort(z.tensor.data.ravel()), np.sort(w.tensor.data.ravel())))

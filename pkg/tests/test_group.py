import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eqseg.group import (FieldType, GeometricTensor, direct_sum, make_group, regular_rep, rotate_array,
                         rotate_by_angle, transform_field, trivial_rep)
from eqseg.tensor import Tensor

GROUPS = [("cyclic", 1), ("cyclic", 2), ("cyclic", 4), ("cyclic", 8), ("dihedral", 2), ("dihedral", 4)]


def field(group, kinds):
    reps = {"t": trivial_rep(group), "r": regular_rep(group)}
    return FieldType(group, [reps[k] for k in kinds])


def random_field(group, kinds, hw=6, seed=0, batch=2):
    ft = field(group, kinds)
    data = np.random.default_rng(seed).standard_normal((batch, ft.total_dim, hw, hw))
    return GeometricTensor(Tensor(data), ft)


def test_c8_elements_and_angles():
    g = make_group("cyclic", 8)
    assert g.order == 8
    assert [e.degrees for e in g.elements] == [45.0 * k for k in range(8)]


def test_trivial_group():
    g = make_group("cyclic", 1)
    assert g.elements == (g.identity,)


@pytest.mark.parametrize("n", [0, -3])
def test_invalid_order(n):
    with pytest.raises(ValueError):
        make_group("cyclic", n)


def test_invalid_kind():
    with pytest.raises(ValueError):
        make_group("spiral", 4)


@pytest.mark.parametrize("kind,n", GROUPS)
def test_group_axioms_exhaustive(kind, n):
    g = make_group(kind, n)
    els = g.elements
    assert len(els) == (2 * n if kind == "dihedral" else n)
    assert len(set(els)) == len(els)
    for a, b in itertools.product(els, els):
        assert g.compose(a, b) in els
    for a, b, c in itertools.product(els, els, els):
        assert g.compose(g.compose(a, b), c) == g.compose(a, g.compose(b, c))
    for a in els:
        assert g.compose(g.identity, a) == a == g.compose(a, g.identity)
        assert g.compose(a, g.inverse(a)) == g.identity


def test_d4_cayley_table_is_latin_square():
    g = make_group("dihedral", 4)
    els = g.elements
    table = np.array([[g.index(g.compose(a, b)) for b in els] for a in els])
    assert table.shape == (8, 8)
    for row in table:
        assert sorted(row) == list(range(8))
    for col in table.T:
        assert sorted(col) == list(range(8))


@pytest.mark.parametrize("kind,n", [("cyclic", 4), ("dihedral", 4), ("dihedral", 2)])
def test_composition_matches_spatial_action(kind, n):
    g = make_group(kind, n)
    a = np.random.default_rng(1).standard_normal((5, 5))
    for x, y in itertools.product(g.elements, g.elements):
        np.testing.assert_array_equal(rotate_array(rotate_array(a, y), x), rotate_array(a, g.compose(x, y)))


def test_rotation_is_counterclockwise():
    a = np.zeros((3, 3))
    a[1, 2] = 1  # right of centre
    out = rotate_array(a, make_group("cyclic", 4).element(1))
    assert out[0, 1] == 1  # above centre


def test_reflection_mirrors_left_right():
    a = np.arange(9.0).reshape(3, 3)
    np.testing.assert_array_equal(rotate_array(a, make_group("dihedral", 4).element(0, True)), a[:, ::-1])


def test_bilinear_rotation_reproduces_linear_ramps():
    # bilinear sampling is exact for affine images, so interior pixels must match
    # the ramp evaluated at the inversely rotated coordinate
    h = 9
    c = (h - 1) / 2
    ii, jj = np.meshgrid(np.arange(h), np.arange(h), indexing="ij")
    u, v = jj - c, c - ii
    ramp = 0.3 * u - 0.7 * v + 2.0
    for deg in (45.0, 30.0, 135.0, 200.0):
        t = np.deg2rad(deg)
        su, sv = np.cos(t) * u + np.sin(t) * v, -np.sin(t) * u + np.cos(t) * v
        expected = 0.3 * su - 0.7 * sv + 2.0
        inside = np.hypot(u, v) <= c - 1
        np.testing.assert_allclose(rotate_by_angle(ramp, deg)[inside], expected[inside], atol=1e-12)


def test_rotate_by_angle_quarter_exact():
    a = np.random.default_rng(2).random((1, 4, 4))
    np.testing.assert_array_equal(rotate_by_angle(a, 270), np.rot90(a, 3, axes=(1, 2)))


def test_trivial_rep_c8():
    g = make_group("cyclic", 8)
    rho = trivial_rep(g)
    assert rho.dim == 1
    for e in g.elements:
        assert rho(e).tolist() == [[1.0]]


def test_regular_rep_c4_quarter_is_cyclic_shift():
    g = make_group("cyclic", 4)
    p = regular_rep(g)(g.element(1))
    expected = np.roll(np.eye(4), 1, axis=0)  # e_j -> e_{j+1}
    np.testing.assert_array_equal(p, expected)


@pytest.mark.parametrize("kind,n", GROUPS)
def test_representations_are_homomorphisms(kind, n):
    g = make_group(kind, n)
    reps = [trivial_rep(g), regular_rep(g), direct_sum([trivial_rep(g), regular_rep(g), trivial_rep(g)])]
    for rho in reps:
        np.testing.assert_array_equal(rho(g.identity), np.eye(rho.dim))
        for a, b in itertools.product(g.elements, g.elements):
            np.testing.assert_array_equal(rho(a) @ rho(b), rho(g.compose(a, b)))


@pytest.mark.parametrize("kind,n", GROUPS)
def test_regular_matrices_are_permutations(kind, n):
    g = make_group(kind, n)
    for e in g.elements:
        p = regular_rep(g)(e)
        assert set(np.unique(p)) <= {0.0, 1.0}
        assert (p.sum(axis=0) == 1).all() and (p.sum(axis=1) == 1).all()


def test_direct_sum_examples():
    g = make_group("cyclic", 4)
    t, r = trivial_rep(g), regular_rep(g)
    rgb = direct_sum([t, t, t])
    for e in g.elements:
        np.testing.assert_array_equal(rgb(e), np.eye(3))
    assert direct_sum([r]) is r
    s = direct_sum([t, r])
    assert s.dim == 5
    for e in g.elements:
        m = s(e)
        assert m[0, 0] == 1 and not m[0, 1:].any() and not m[1:, 0].any()
        np.testing.assert_array_equal(m[1:, 1:], r(e))


def test_direct_sum_mixed_groups_rejected():
    with pytest.raises(ValueError):
        direct_sum([trivial_rep(make_group("cyclic", 4)), trivial_rep(make_group("cyclic", 8))])
    with pytest.raises(ValueError):
        FieldType(make_group("cyclic", 4), [trivial_rep(make_group("cyclic", 2))])


def test_geometric_tensor_channel_check():
    ft = field(make_group("cyclic", 4), "r")
    with pytest.raises(ValueError):
        GeometricTensor(Tensor(np.zeros((1, 3, 4, 4))), ft)


def test_transform_rgb_is_plain_rot90():
    g = make_group("cyclic", 8)
    x = random_field(g, "ttt")
    out = transform_field(x, g.element(2))
    np.testing.assert_array_equal(out.tensor.data, np.rot90(x.tensor.data, 1, axes=(2, 3)))


def test_transform_identity():
    g = make_group("cyclic", 8)
    x = random_field(g, "rt")
    np.testing.assert_array_equal(transform_field(x, g.identity).tensor.data, x.tensor.data)


def test_transform_regular_c4_brute_force():
    g = make_group("cyclic", 4)
    x = random_field(g, "r", hw=4, batch=1)
    out = transform_field(x, g.element(1)).tensor.data
    rot = np.rot90(x.tensor.data, 1, axes=(2, 3))
    expected = np.empty_like(rot)
    for c in range(4):  # channel c moves to channel c + 1
        expected[:, (c + 1) % 4] = rot[:, c]
    np.testing.assert_array_equal(out, expected)
    back = transform_field(GeometricTensor(Tensor(out), x.field_type), g.element(3))
    np.testing.assert_array_equal(back.tensor.data, x.tensor.data)


@pytest.mark.parametrize("kind,n", [("cyclic", 4), ("cyclic", 8), ("dihedral", 4)])
def test_transform_composition_bitwise(kind, n):
    g = make_group(kind, n)
    x = random_field(g, "rtr", hw=5)
    quarter = [e for e in g.elements if e.is_quarter_turn]
    for a, b in itertools.product(quarter, quarter):
        two = transform_field(transform_field(x, b), a).tensor.data
        one = transform_field(x, g.compose(a, b)).tensor.data
        np.testing.assert_array_equal(one, two)


@settings(max_examples=30, deadline=None)
@given(kinds=st.text(alphabet="tr", min_size=1, max_size=4), q=st.integers(0, 3), seed=st.integers(0, 10**6),
       n=st.sampled_from([4, 8]))
def test_transform_preserves_multiset(kinds, q, seed, n):
    g = make_group("cyclic", n)
    x = random_field(g, kinds, hw=4, seed=seed, batch=1)
    out = transform_field(x, g.element(q * n // 4)).tensor.data
    np.testing.assert_array_equal(np.sort(out.ravel()), np.sort(x.tensor.data.ravel()))


def test_transform_round_trip_c8_quarters():
    g = make_group("cyclic", 8)
    x = random_field(g, "rt")
    for r in (2, 4, 6):
        e = g.element(r)
        back = transform_field(transform_field(x, e), g.inverse(e))
        np.testing.assert_array_equal(back.tensor.data, x.tensor.data)

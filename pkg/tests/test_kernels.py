import itertools

import numpy as np
import pytest

from eqseg.group import FieldType, make_group, regular_rep, trivial_rep
from eqseg.kernels import build_basis, constraint_residual, expand_kernel, reynolds_project
from eqseg.tensor import Tensor, sum_all
from helpers import constraint_nullspace_dim, max_rel_error, numeric_grad


def ftype(group, kinds):
    reps = {"t": trivial_rep(group), "r": regular_rep(group)}
    return FieldType(group, [reps[c] for c in kinds])


C4 = make_group("cyclic", 4)
C8 = make_group("cyclic", 8)


@pytest.mark.parametrize("n,fin,fout,k", [(4, "t", "r", 3), (4, "rt", "rr", 3), (2, "r", "tr", 3), (4, "r", "r", 1)])
def test_projector_idempotent(n, fin, fout, k):
    g = make_group("cyclic", n)
    a, b = ftype(g, fin), ftype(g, fout)
    raw = np.random.default_rng(0).standard_normal((b.total_dim, a.total_dim, k, k))
    once = reynolds_project(raw, a, b)
    np.testing.assert_allclose(reynolds_project(once, a, b), once, atol=1e-12, rtol=0)


def test_projector_identity_on_scalar_k1():
    a = ftype(C4, "t")
    assert reynolds_project(np.array([[[[2.5]]]]), a, a)[0, 0, 0, 0] == pytest.approx(2.5, abs=1e-15)


def test_projector_trivial_to_regular_k1_constant_vector():
    # the constraint forces K = rho_reg(g) K for every g, i.e. all entries equal
    raw = np.array([1.0, 2.0, 3.0, 6.0]).reshape(4, 1, 1, 1)
    out = reynolds_project(raw, ftype(C4, "t"), ftype(C4, "r"))
    np.testing.assert_allclose(out.ravel(), np.full(4, 3.0), atol=1e-15)


def test_projector_errors():
    with pytest.raises(ValueError):
        reynolds_project(np.zeros((1, 1, 3, 3)), ftype(C4, "t"), ftype(C8, "t"))
    with pytest.raises(ValueError):
        reynolds_project(np.zeros((1, 1, 2, 2)), ftype(C4, "t"), ftype(C4, "t"))
    with pytest.raises(ValueError):
        build_basis(ftype(C4, "t"), ftype(C4, "t"), 4)


@pytest.mark.parametrize("fin,fout,k,count", [("t", "t", 1, 1), ("r", "r", 1, 4), ("t", "t", 3, 3)])
def test_basis_counts_examples(fin, fout, k, count):
    assert build_basis(ftype(C4, fin), ftype(C4, fout), k).count == count


FIELD_KINDS = ["t", "r", "tt", "tr", "rr"]


@pytest.mark.parametrize("n", [2, 4])
@pytest.mark.parametrize("k", [1, 3])
def test_basis_dimension_matches_dense_oracle(n, k):
    g = make_group("cyclic", n)
    for fin, fout in itertools.product(FIELD_KINDS, FIELD_KINDS):
        a, b = ftype(g, fin), ftype(g, fout)
        expected = constraint_nullspace_dim(a.representation, b.representation, list(g.elements), k)
        assert build_basis(a, b, k).count == expected, (fin, fout)


def test_trivial_to_regular_k3_matches_oracle():
    a, b = ftype(C4, "t"), ftype(C4, "r")
    expected = constraint_nullspace_dim(a.representation, b.representation, list(C4.elements), 3)
    assert build_basis(a, b, 3).count == expected == 9


@pytest.mark.parametrize("group,fin,fout", [(C4, "rt", "rr"), (C4, "t", "r"), (C8, "r", "r"), (C8, "t", "rt")])
def test_basis_orthonormal_and_constrained(group, fin, fout):
    a, b = ftype(group, fin), ftype(group, fout)
    basis = build_basis(a, b, 3)
    flat = basis.basis.reshape(basis.count, -1)
    np.testing.assert_allclose(flat @ flat.T, np.eye(basis.count), atol=1e-10)
    for e in group.elements:
        if e.is_quarter_turn:
            assert np.abs(constraint_residual(basis.basis, e, a, b)).max() <= 1e-10


def test_c8_diagonal_elements_approximately_satisfied_on_central_grid():
    a, b = ftype(C8, "r"), ftype(C8, "rt")
    basis = build_basis(a, b, 3)
    for e in C8.elements:
        if not e.is_quarter_turn:
            res = constraint_residual(basis.basis, e, a, b)
            assert np.abs(res[..., 1:-1, 1:-1]).max() <= 1e-2


@pytest.mark.parametrize("group", [C4, C8, make_group("cyclic", 2)])
def test_parameter_efficiency(group):
    for fin, fout in [("r", "r"), ("t", "r"), ("r", "t"), ("rt", "r")]:
        a, b = ftype(group, fin), ftype(group, fout)
        for k in (1, 3):
            assert build_basis(a, b, k).count < a.total_dim * b.total_dim * k * k


def test_trivial_group_basis_is_unconstrained():
    c1 = make_group("cyclic", 1)
    a, b = ftype(c1, "ttt"), ftype(c1, "tt")
    assert build_basis(a, b, 3).count == 3 * 2 * 9


def test_expand_kernel_values_and_errors():
    basis = build_basis(ftype(C4, "t"), ftype(C4, "r"), 3)
    e1 = np.zeros(basis.count)
    e1[0] = 1.0
    np.testing.assert_array_equal(expand_kernel(basis, Tensor(e1)).data, basis.basis[0])
    assert not expand_kernel(basis, Tensor(np.zeros(basis.count))).data.any()
    with pytest.raises(ValueError):
        expand_kernel(basis, Tensor(np.zeros(basis.count + 1)))


def test_expand_kernel_gradient():
    basis = build_basis(ftype(C4, "r"), ftype(C4, "rt"), 3)
    rng = np.random.default_rng(3)
    c = Tensor(rng.standard_normal(basis.count), requires_grad=True)
    w = rng.standard_normal(basis.basis.shape[1:])
    sum_all(expand_kernel(basis, c) * w).backward()
    num = numeric_grad(lambda: float((expand_kernel(basis, Tensor(c.data)).data * w).sum()), c.data)
    assert max_rel_error(c.grad, num) <= 1e-6
    c.grad = None
    sum_all(expand_kernel(basis, c)).backward()
    num = numeric_grad(lambda: float(expand_kernel(basis, Tensor(c.data)).data.sum()), c.data)
    assert max_rel_error(c.grad, num, floor=1e-9) <= 1e-6

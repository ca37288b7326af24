"""Independent oracles shared by the test modules."""
import itertools

import numpy as np


def naive_conv2d(x, kernel, bias=None, stride=1, padding=0):
    b, cin, h, w = x.shape
    cout, _, k, _ = kernel.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    out = np.zeros((b, cout, ho, wo), dtype=x.dtype)
    for n in range(b):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(cin):
                        for a in range(k):
                            for d in range(k):
                                acc += kernel[o, c, a, d] * xp[n, c, i * stride + a, j * stride + d]
                    out[n, o, i, j] = acc + (bias[o] if bias is not None else 0.0)
    return out


def numeric_grad(f, arr, h=1e-5, indices=None):
    """Central differences of scalar ``f()`` w.r.t. entries of ``arr`` (modified in place)."""
    grad = np.zeros_like(arr)
    idx = list(np.ndindex(arr.shape)) if indices is None else indices
    for i in idx:
        old = arr[i]
        arr[i] = old + h
        fp = f()
        arr[i] = old - h
        fm = f()
        arr[i] = old
        grad[i] = (fp - fm) / (2 * h)
    return grad


def max_rel_error(analytic, numeric, floor=1e-6):
    """Largest relative error over entries where either gradient exceeds ``floor``."""
    a, n = np.asarray(analytic).ravel(), np.asarray(numeric).ravel()
    sel = (np.abs(a) > floor) | (np.abs(n) > floor)
    if not sel.any():
        return 0.0
    return float(np.max(np.abs(a[sel] - n[sel]) / np.maximum(np.abs(a[sel]), np.abs(n[sel]))))


def rotate_offsets_quarter(k, q):
    """Pixel permutation of a k x k grid under q counterclockwise quarter turns,
    computed from coordinates rather than np.rot90: returns src index for each dst."""
    c = (k - 1) / 2
    perm = np.zeros((k, k, 2), dtype=int)
    for i, j in itertools.product(range(k), range(k)):
        u, v = j - c, c - i
        for _ in range(q % 4):  # inverse rotation: (u, v) -> (v, -u)
            u, v = v, -u
        perm[i, j] = (int(round(c - v)), int(round(u + c)))
    return perm


def constraint_nullspace_dim(rho_in, rho_out, elements, k):
    """Dimension of {K : K(gy) = rho_out(g) K(y) rho_in(g)^-1 for all g} by dense rank.

    ``elements`` are quarter-turn group elements. Unknowns are vec(K) for K
    shaped [out, in, k, k]. Each element contributes A_g vec(K) = vec(K) with
    A_g = rho_out(g)^-1 (x) rho_in(g)^T (x) S_g, where S_g reads pixel g y.
    The null space of sum_g (A_g - I)^T (A_g - I) is the solution space.
    """
    do, di = rho_out(elements[0]).shape[0], rho_in(elements[0]).shape[0]
    n = do * di * k * k
    gram = np.zeros((n, n))
    for g in elements:
        q = g.rotation * 4 // g.n
        perm = rotate_offsets_quarter(k, -q)
        s = np.zeros((k * k, k * k))
        for y0, y1 in itertools.product(range(k), range(k)):
            s0, s1 = perm[y0, y1]
            s[y0 * k + y1, s0 * k + s1] = 1.0
        a = np.kron(np.kron(np.linalg.inv(rho_out(g)), rho_in(g).T), s) - np.eye(n)
        gram += a.T @ a
    return n - np.linalg.matrix_rank(gram, tol=1e-8)

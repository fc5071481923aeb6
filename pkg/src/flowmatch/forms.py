"""Constant-coefficient exterior algebra on R^m with the flat metric.

A k-form is a dict mapping strictly increasing index tuples to coefficients.
Only what the divergence-free construction and the structure checks need is here.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np


def perm_sign(seq) -> int:
    """Sign of the permutation that sorts ``seq`` (0 if an index repeats)."""
    seq = list(seq)
    if len(set(seq)) != len(seq):
        return 0
    sign = 1
    for i in range(len(seq)):
        for j in range(i + 1, len(seq)):
            if seq[i] > seq[j]:
                sign = -sign
    return sign


def one_form(v) -> dict:
    return {(i,): float(c) for i, c in enumerate(v) if c != 0.0}


def wedge(a: dict, b: dict) -> dict:
    out: dict = {}
    for I, x in a.items():
        for J, y in b.items():
            s = perm_sign(I + J)
            if s == 0:
                continue
            K = tuple(sorted(I + J))
            out[K] = out.get(K, 0.0) + s * x * y
    return {K: v for K, v in out.items() if v != 0.0}


def wedge_all(forms, m: int) -> dict:
    """Wedge a list of forms; the empty product is the constant 0-form 1."""
    out = {(): 1.0}
    for f in forms:
        out = wedge(out, f)
    return out


def hodge_star(form: dict, m: int) -> dict:
    """Flat-metric Hodge star for the orientation dx_1 ^ ... ^ dx_m."""
    out: dict = {}
    for I, c in form.items():
        Ic = tuple(i for i in range(m) if i not in I)
        out[Ic] = out.get(Ic, 0.0) + perm_sign(I + Ic) * c
    return out


def to_vector(form: dict, m: int) -> np.ndarray:
    """Components of a 1-form (metric raising is the identity for the flat metric)."""
    v = np.zeros(m)
    for I, c in form.items():
        if len(I) != 1:
            raise ValueError("not a 1-form")
        v[I[0]] += c
    return v


def basis(m: int, k: int):
    return list(combinations(range(m), k))


def symplectic_matrix(m: int) -> np.ndarray:
    """Omega with sigma(u, v) = u^T Omega v for sigma = sum dx_i ^ dy_i."""
    d = m // 2
    Om = np.zeros((m, m))
    Om[:d, d:] = np.eye(d)
    Om[d:, :d] = -np.eye(d)
    return Om


def contact_form(x) -> np.ndarray:
    """Components of alpha = dz - sum y_i dx_i at ``x`` (coordinates (x.., y.., z))."""
    x = np.asarray(x, dtype=float)
    m = x.shape[-1]
    d = m // 2
    a = np.zeros(x.shape)
    a[..., :d] = -x[..., d : 2 * d]
    a[..., 2 * d] = 1.0
    return a


def contact_dalpha(m: int) -> np.ndarray:
    """Matrix of d(alpha) = sum dx_i ^ dy_i (constant, no dz part)."""
    out = np.zeros((m, m))
    out[: m - 1, : m - 1] = symplectic_matrix(m - 1)
    return out

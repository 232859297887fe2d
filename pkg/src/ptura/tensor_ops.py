"""Dense complex multiway-array algebra.

Tensors are plain ndarrays. Unfoldings use the first-index-fastest column
order, so that for factors ``A_1 .. A_N``::

    unfold(kruskal([A_1, ..., A_N]), n) == A_n @ khatri_rao([A_N, ..., A_{n+1}, A_{n-1}, ..., A_1]).T

The inner product conjugates its first argument.
"""
import numpy as np


def khatri_rao(matrices):
    """Column-wise Kronecker product; the last matrix's row index runs fastest."""
    matrices = [np.asarray(m) for m in matrices]
    if not matrices:
        raise ValueError("need at least one matrix")
    K = matrices[0].shape[1]
    if any(m.ndim != 2 or m.shape[1] != K for m in matrices):
        raise ValueError("all matrices must be 2-D with the same number of columns")
    out = matrices[0]
    for m in matrices[1:]:
        out = (out[:, None, :] * m[None, :, :]).reshape(out.shape[0] * m.shape[0], K)
    return out


def unfold(tensor, mode):
    tensor = np.asarray(tensor)
    if not 0 <= mode < tensor.ndim:
        raise IndexError(f"mode {mode} out of range for order-{tensor.ndim} tensor")
    return np.moveaxis(tensor, mode, 0).reshape(tensor.shape[mode], -1, order="F")


def fold(matrix, mode, shape):
    shape = tuple(shape)
    if not 0 <= mode < len(shape):
        raise IndexError(f"mode {mode} out of range for order-{len(shape)} tensor")
    moved = (shape[mode],) + shape[:mode] + shape[mode + 1:]
    return np.moveaxis(np.asarray(matrix).reshape(moved, order="F"), 0, mode)


def others_khatri_rao(factors, mode):
    """Khatri-Rao product of every factor except ``mode``, highest mode first."""
    rest = [f for i, f in enumerate(factors) if i != mode]
    return khatri_rao(rest[::-1])


def kruskal(factors):
    """Sum over columns k of the outer products ``a_k^(1) o ... o a_k^(N)``."""
    factors = [np.asarray(f) for f in factors]
    if not factors:
        raise ValueError("need at least one factor")
    K = factors[0].shape[1]
    if any(f.ndim != 2 or f.shape[1] != K for f in factors):
        raise ValueError("factors must share a column count")
    shape = tuple(f.shape[0] for f in factors)
    dtype = np.result_type(*factors)
    if K == 0:
        return np.zeros(shape, dtype=dtype)
    if len(factors) == 1:
        return factors[0].sum(axis=1)
    return fold(factors[0] @ others_khatri_rao(factors, 0).T, 0, shape)


def hadamard(matrices):
    out = np.asarray(matrices[0]).copy()
    for m in matrices[1:]:
        out = out * m
    return out


def inner(a, b):
    """``<a, b> = sum(conj(a) * b)``."""
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return complex(np.vdot(a, b))


def fro_norm2(a):
    a = np.asarray(a)
    return float(np.vdot(a, a).real)

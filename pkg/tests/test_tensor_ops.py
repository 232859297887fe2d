import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import cgauss
from ptura.tensor_ops import (fold, fro_norm2, hadamard, inner, khatri_rao, kruskal,
                              others_khatri_rao, unfold)


def kruskal_loop(factors):
    shape = tuple(f.shape[0] for f in factors)
    out = np.zeros(shape, dtype=complex)
    for idx in itertools.product(*[range(s) for s in shape]):
        out[idx] = sum(np.prod([f[i, k] for f, i in zip(factors, idx)]) for k in range(factors[0].shape[1]))
    return out


def unfold_loop(t, mode):
    # column index of entry (i_0..i_N) skipping mode, earliest remaining index fastest
    rest = [d for d in range(t.ndim) if d != mode]
    ncol = int(np.prod([t.shape[d] for d in rest]))
    out = np.zeros((t.shape[mode], ncol), dtype=t.dtype)
    for idx in itertools.product(*[range(s) for s in t.shape]):
        col, stride = 0, 1
        for d in rest:
            col += idx[d] * stride
            stride *= t.shape[d]
        out[idx[mode], col] = t[idx]
    return out


def khatri_rao_loop(mats):
    K = mats[0].shape[1]
    cols = []
    for k in range(K):
        c = np.array([1.0 + 0j])
        for m in mats:
            c = np.kron(c, m[:, k])
        cols.append(c)
    return np.stack(cols, axis=1)


shapes = st.lists(st.integers(1, 5), min_size=2, max_size=4)


class TestKruskal:
    def test_empty(self):
        out = kruskal([np.zeros((3, 0)), np.zeros((4, 0)), np.zeros((2, 0))])
        assert out.shape == (3, 4, 2) and not out.any()

    def test_rank_one_entrywise(self, rng):
        u, v, w = cgauss(rng, 3, 1), cgauss(rng, 4, 1), cgauss(rng, 2, 1)
        T = kruskal([u, v, w])
        for i, j, m in itertools.product(range(3), range(4), range(2)):
            assert abs(T[i, j, m] - u[i, 0] * v[j, 0] * w[m, 0]) < 1e-14

    def test_sum_of_rank_ones(self, rng):
        f = [cgauss(rng, n, 3) for n in (3, 2, 4)]
        parts = sum(kruskal([a[:, [k]] for a in f]) for k in range(3))
        np.testing.assert_allclose(kruskal(f), parts, atol=1e-13)

    def test_column_mismatch(self):
        with pytest.raises(ValueError):
            kruskal([np.ones((2, 2)), np.ones((3, 1))])

    def test_against_loop_oracle_100_seeds(self):
        worst = 0.0
        for seed in range(100):
            r = np.random.default_rng(seed)
            shape = r.integers(1, 6, size=r.integers(2, 5))
            K = int(r.integers(1, 5))
            f = [cgauss(r, int(n), K) for n in shape]
            ref = kruskal_loop(f)
            worst = max(worst, np.linalg.norm(kruskal(f) - ref) / np.linalg.norm(ref))
        assert worst <= 1e-12


class TestUnfold:
    @given(shapes, st.data())
    def test_fold_inverts_unfold(self, shape, data):
        mode = data.draw(st.integers(0, len(shape) - 1))
        t = np.arange(np.prod(shape)).reshape(shape) * (1 + 1j)
        np.testing.assert_array_equal(fold(unfold(t, mode), mode, shape), t)

    def test_against_loop_layout(self, rng):
        t = cgauss(rng, 3, 4, 2, 3)
        for mode in range(4):
            np.testing.assert_array_equal(unfold(t, mode), unfold_loop(t, mode))

    def test_norm_preserved(self, rng):
        t = cgauss(rng, 4, 3, 5)
        for mode in range(3):
            assert np.isclose(np.linalg.norm(unfold(t, mode)), np.linalg.norm(t), rtol=1e-14)

    def test_three_way_identity(self, rng):
        A, B, C = cgauss(rng, 4, 2), cgauss(rng, 3, 2), cgauss(rng, 2, 2)
        lhs = unfold(kruskal([A, B, C]), 0)
        np.testing.assert_allclose(lhs, A @ khatri_rao([C, B]).T, atol=1e-12 * np.linalg.norm(lhs))

    def test_bad_mode(self):
        with pytest.raises(IndexError):
            unfold(np.zeros((2, 2)), 2)

    def test_reconstruction_identity_100_seeds(self):
        # pins the layout: unfold(kruskal(A), n) == A_n @ KR(others, highest first).T
        worst = 0.0
        for seed in range(100):
            r = np.random.default_rng(1000 + seed)
            shape = r.integers(1, 6, size=r.integers(2, 5))
            K = int(r.integers(1, 5))
            f = [cgauss(r, int(n), K) for n in shape]
            T = kruskal_loop(f)
            for n in range(len(f)):
                lhs = unfold_loop(T, n)
                rhs = f[n] @ others_khatri_rao(f, n).T
                worst = max(worst, np.linalg.norm(lhs - rhs) / max(np.linalg.norm(lhs), 1e-300))
        assert worst <= 1e-12


class TestKhatriRao:
    def test_against_kron_oracle(self, rng):
        for _ in range(100):
            mats = [cgauss(rng, int(rng.integers(1, 6)), 3) for _ in range(int(rng.integers(1, 4)))]
            ref = khatri_rao_loop(mats)
            assert np.linalg.norm(khatri_rao(mats) - ref) <= 1e-12 * np.linalg.norm(ref)

    def test_gram_identity(self, rng):
        A, B = cgauss(rng, 4, 3), cgauss(rng, 5, 3)
        P = khatri_rao([A, B])
        np.testing.assert_allclose(P.conj().T @ P, (A.conj().T @ A) * (B.conj().T @ B), atol=1e-12)

    def test_single_and_shape(self, rng):
        A = cgauss(rng, 4, 2)
        np.testing.assert_array_equal(khatri_rao([A]), A)
        assert khatri_rao([A, cgauss(rng, 3, 2)]).shape == (12, 2)

    def test_zero_columns(self):
        assert khatri_rao([np.zeros((3, 0)), np.zeros((2, 0))]).shape == (6, 0)

    def test_mismatch(self):
        with pytest.raises(ValueError):
            khatri_rao([np.ones((2, 2)), np.ones((2, 3))])


class TestInner:
    def test_self_is_norm(self, rng):
        a = cgauss(rng, 2, 3, 2)
        assert np.isclose(inner(a, a), fro_norm2(a)) and fro_norm2(a) >= 0

    def test_zero(self, rng):
        assert inner(cgauss(rng, 2, 2), np.zeros((2, 2))) == 0

    def test_loop_oracle(self, rng):
        a, b = cgauss(rng, 2, 2, 2), cgauss(rng, 2, 2, 2)
        ref = sum(np.conj(a[idx]) * b[idx] for idx in itertools.product(range(2), repeat=3))
        assert abs(inner(a, b) - ref) <= 1e-12 * abs(ref)

    def test_conjugates_first(self):
        assert inner(np.array([[1j]]), np.array([[1.0]])) == -1j

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            inner(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_hadamard(self, rng):
        a, b, c = cgauss(rng, 3, 3), cgauss(rng, 3, 3), cgauss(rng, 3, 3)
        np.testing.assert_array_equal(hadamard([a, b, c]), a * b * c)

"""Backend parity and dense-matrix oracles for the CSR kernels."""

import numpy as np
import pytest

import glinkx.kernels as K
from conftest import dense_adjacency, random_graph
from glinkx.kernels import _pykern


def _backends():
    impls = [_pykern]
    try:
        from glinkx.kernels import _ckern

        impls.append(_ckern)
    except ImportError:
        pass
    return impls


BACKENDS = _backends()


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.BACKEND)
class TestAgainstDenseOracles:
    def test_label_mean(self, impl, rng):
        g = random_graph(rng, 40)
        c = 4
        labels = rng.integers(0, c, 40)
        mask = rng.random(40) < 0.6
        out, counts = K.label_mean_csr(g.in_offsets, g.in_sources, labels,
                                       mask, c, impl=impl)
        a = dense_adjacency(g)
        onehot = np.eye(c)[labels] * mask[:, None]
        expect_counts = (a.T * mask[None, :].astype(float)).sum(axis=1)
        expect = a.T @ onehot
        nz = expect_counts > 0
        expect[nz] /= expect_counts[nz, None]
        assert np.array_equal(counts, expect_counts.astype(int))
        assert np.allclose(out, expect, atol=1e-12)

    def test_row_mean(self, impl, rng):
        g = random_graph(rng, 35)
        rows = rng.normal(size=(35, 3))
        out, counts = K.row_mean_csr(g.out_offsets, g.out_targets, rows,
                                     impl=impl)
        a = dense_adjacency(g)
        deg = a.sum(axis=1)
        expect = a @ rows
        nz = deg > 0
        expect[nz] /= deg[nz, None]
        assert np.allclose(out, expect, atol=1e-12)
        assert np.array_equal(counts, deg.astype(int))

    def test_row_mean_masked(self, impl, rng):
        g = random_graph(rng, 30)
        rows = rng.normal(size=(30, 2))
        mask = rng.random(30) < 0.5
        out, counts = K.row_mean_csr(g.out_offsets, g.out_targets, rows,
                                     source_mask=mask, impl=impl)
        a = dense_adjacency(g) * mask[None, :]
        deg = a.sum(axis=1)
        expect = a @ rows
        nz = deg > 0
        expect[nz] /= deg[nz, None]
        assert np.allclose(out, expect, atol=1e-12)

    def test_spmm(self, impl, rng):
        g = random_graph(rng, 25)
        data = rng.normal(size=g.m)
        dense = rng.normal(size=(25, 4))
        out = K.spmm_csr(g.out_offsets, g.out_targets, data, dense, impl=impl)
        a = np.zeros((25, 25))
        e = g.edges()
        for (s, d), w in zip(e, data):
            a[s, d] += w
        assert np.allclose(out, a @ dense, atol=1e-12)

    def test_rows_matmul_and_transpose(self, impl, rng):
        g = random_graph(rng, 20)
        w = rng.normal(size=(20, 6))
        ids = rng.integers(0, 20, size=7)
        out = K.csr_rows_matmul(g.out_offsets, g.out_targets, ids, w,
                                impl=impl)
        a = dense_adjacency(g)
        assert np.allclose(out, a[ids] @ w, atol=1e-12)
        grad = rng.normal(size=(7, 6))
        dw = np.zeros_like(w)
        K.csr_rows_matmul_t_add(g.out_offsets, g.out_targets, ids, grad, dw,
                                impl=impl)
        assert np.allclose(dw, a[ids].T @ grad, atol=1e-12)

    def test_square_support(self, impl, rng):
        g = random_graph(rng, 20, symmetrize=True)
        indptr, indices, counts = K.square_support(
            g.out_offsets, g.out_targets, g.n, impl=impl
        )
        a = dense_adjacency(g)
        a2 = a @ a
        dense = np.zeros_like(a2)
        src = np.repeat(np.arange(g.n), np.diff(indptr))
        dense[src, indices] = counts
        assert np.array_equal(dense, a2)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
class TestBackendParity:
    def test_all_kernels_agree(self, rng):
        py, c = BACKENDS[0], BACKENDS[1]
        for trial in range(10):
            g = random_graph(rng, 60, density=4.0)
            labels = rng.integers(0, 5, 60)
            mask = rng.random(60) < 0.7
            rows = rng.normal(size=(60, 5))
            o1, c1 = K.label_mean_csr(g.in_offsets, g.in_sources, labels,
                                      mask, 5, impl=py)
            o2, c2 = K.label_mean_csr(g.in_offsets, g.in_sources, labels,
                                      mask, 5, impl=c)
            assert np.array_equal(c1, c2) and np.allclose(o1, o2, atol=1e-13)
            r1, d1 = K.row_mean_csr(g.out_offsets, g.out_targets, rows,
                                    impl=py)
            r2, d2 = K.row_mean_csr(g.out_offsets, g.out_targets, rows,
                                    impl=c)
            assert np.array_equal(d1, d2) and np.allclose(r1, r2, atol=1e-13)
            data = rng.normal(size=g.m)
            s1 = K.spmm_csr(g.out_offsets, g.out_targets, data, rows, impl=py)
            s2 = K.spmm_csr(g.out_offsets, g.out_targets, data, rows, impl=c)
            assert np.allclose(s1, s2, atol=1e-13)
            ip1, ix1, ct1 = K.square_support(g.out_offsets, g.out_targets,
                                             g.n, impl=py)
            ip2, ix2, ct2 = K.square_support(g.out_offsets, g.out_targets,
                                             g.n, impl=c)
            assert np.array_equal(ip1, ip2)
            assert np.array_equal(ix1, ix2)
            assert np.array_equal(ct1, ct2)


from hypothesis import given, settings
from hypothesis import strategies as st


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(3, 80), st.integers(2, 6))
def test_label_mean_rows_on_simplex(seed, n, c):
    """Wherever a node has a qualifying source, the propagated row is a
    probability vector; elsewhere it is exactly zero."""
    rng = np.random.default_rng(seed)
    g = random_graph(rng, n)
    labels = rng.integers(0, c, n)
    mask = rng.random(n) < 0.7
    out, counts = K.label_mean_csr(g.in_offsets, g.in_sources, labels, mask,
                                   c)
    has = counts > 0
    assert np.allclose(out[has].sum(axis=1), 1.0, atol=1e-9)
    assert np.all(out >= 0.0)
    assert np.all(out[~has] == 0.0)


def test_edge_pass_counter():
    rng = np.random.default_rng(0)
    g = random_graph(rng, 10)
    rows = rng.normal(size=(10, 2))
    with K.count_edge_passes() as window:
        K.row_mean_csr(g.out_offsets, g.out_targets, rows)
        K.label_mean_csr(g.in_offsets, g.in_sources,
                         rng.integers(0, 2, 10), np.ones(10, bool), 2)
    assert window.delta == 2
    with K.count_edge_passes() as window:
        K.spmm_csr(g.out_offsets, g.out_targets, np.ones(g.m), rows)
    assert window.delta == 0  # weighted spmm is not a propagation pass

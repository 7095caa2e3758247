"""Sparse CSR kernels with backend selection.

Two interchangeable backends implement the hot loops: a compiled Cython
extension (``_ckern``) and a pure-NumPy fallback (``_pykern``).  The
compiled one is preferred when importable; set ``GLINKX_KERNELS`` to
``c`` or ``py`` to force a backend (``auto`` is the default).

The module also owns the edge-pass counter used to assert that label
propagation traverses the edge set a constant number of times per
pipeline run: the two mean-aggregation kernels each count as one pass.
"""

import os

import numpy as np

from .. import _pass_counter


def _select_backend():
    mode = os.environ.get("GLINKX_KERNELS", "auto")
    if mode not in ("auto", "c", "py"):
        raise ValueError(f"GLINKX_KERNELS must be auto, c or py, not {mode!r}")
    if mode in ("auto", "c"):
        try:
            from . import _ckern

            return _ckern
        except ImportError:
            if mode == "c":
                raise
    from . import _pykern

    return _pykern


_impl = _select_backend()


def backend_name():
    """Name of the active kernel backend: "c" or "python"."""
    return _impl.BACKEND


def get_backend(name):
    """Return a specific backend module ("c" or "py"); used by benchmarks."""
    if name == "py":
        from . import _pykern

        return _pykern
    from . import _ckern

    return _ckern


def _as_index(arr):
    return np.ascontiguousarray(arr, dtype=np.int64)


def _as_f64(arr):
    return np.ascontiguousarray(arr, dtype=np.float64)


def label_mean_csr(indptr, indices, labels, source_mask, c, impl=None):
    """Per-target mean of one-hot source labels; one edge pass."""
    _pass_counter.EDGE_PASSES.bump()
    mask = np.ascontiguousarray(source_mask, dtype=np.uint8)
    return (impl or _impl).label_mean_csr(
        _as_index(indptr), _as_index(indices), _as_index(labels), mask, int(c)
    )


def row_mean_csr(indptr, indices, rows, source_mask=None, impl=None):
    """Per-target mean of source rows; one edge pass."""
    _pass_counter.EDGE_PASSES.bump()
    mask = None
    if source_mask is not None:
        mask = np.ascontiguousarray(source_mask, dtype=np.uint8)
    return (impl or _impl).row_mean_csr(
        _as_index(indptr), _as_index(indices), _as_f64(rows), mask
    )


def spmm_csr(indptr, indices, data, dense, impl=None):
    """Weighted CSR times dense."""
    return (impl or _impl).spmm_csr(
        _as_index(indptr), _as_index(indices), _as_f64(data), _as_f64(dense)
    )


def csr_rows_matmul(indptr, indices, row_ids, weight, impl=None):
    """Batch of binary CSR rows times dense weight."""
    return (impl or _impl).csr_rows_matmul(
        _as_index(indptr), _as_index(indices), _as_index(row_ids), _as_f64(weight)
    )


def csr_rows_matmul_t_add(indptr, indices, row_ids, grad, out_dw, impl=None):
    """Accumulate grad rows into weight-gradient rows selected by CSR columns."""
    if out_dw.dtype != np.float64 or not out_dw.flags.c_contiguous:
        raise ValueError("out_dw must be C-contiguous float64")
    return (impl or _impl).csr_rows_matmul_t_add(
        _as_index(indptr), _as_index(indices), _as_index(row_ids), _as_f64(grad), out_dw
    )


def square_support(indptr, indices, n, impl=None):
    """CSR support of the squared adjacency, with 2-path counts."""
    return (impl or _impl).square_support(_as_index(indptr), _as_index(indices), int(n))


# re-exported counter API
EDGE_PASSES = _pass_counter.EDGE_PASSES
count_edge_passes = _pass_counter.count_edge_passes

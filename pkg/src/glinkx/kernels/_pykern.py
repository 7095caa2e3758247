"""Pure-NumPy implementations of the sparse CSR kernels.

This is the fallback backend used when the compiled extension is not
available.  Semantics are identical to ``_ckern``; only speed differs.
All functions assume int64 CSR arrays and float64 dense payloads, already
validated by the dispatch layer.
"""

import numpy as np

BACKEND = "python"

# Edge budget per vectorized chunk; bounds transient memory of the
# expansion-based kernels.
_CHUNK = 1 << 21


def _edge_targets(indptr, n):
    return np.repeat(np.arange(n, dtype=np.int64), np.diff(indptr))


def label_mean_csr(indptr, indices, labels, source_mask, c):
    """Per-target mean of one-hot labels over adjacent sources.

    Sources with ``source_mask == False`` are skipped.  Returns the
    (n, c) float64 mean matrix (zero rows where no source qualifies) and
    the per-target contributing-source counts.
    """
    n = indptr.shape[0] - 1
    targets = _edge_targets(indptr, n)
    srcs = indices
    keep = source_mask.view(bool)[srcs]
    targets = targets[keep]
    srcs = srcs[keep]
    out = np.zeros((n, c), dtype=np.float64)
    counts = np.zeros(n, dtype=np.int64)
    np.add.at(out, (targets, labels[srcs]), 1.0)
    np.add.at(counts, targets, 1)
    nz = counts > 0
    out[nz] /= counts[nz, None]
    return out, counts


def row_mean_csr(indptr, indices, rows, source_mask=None):
    """Per-target mean of ``rows[j]`` over adjacent sources j.

    Optional ``source_mask`` restricts which sources contribute.  Returns
    the (n, k) mean matrix and per-target counts.
    """
    n = indptr.shape[0] - 1
    k = rows.shape[1]
    targets = _edge_targets(indptr, n)
    srcs = indices
    if source_mask is not None:
        keep = source_mask.view(bool)[srcs]
        targets = targets[keep]
        srcs = srcs[keep]
    out = np.zeros((n, k), dtype=np.float64)
    counts = np.zeros(n, dtype=np.int64)
    for lo in range(0, targets.shape[0], _CHUNK):
        hi = lo + _CHUNK
        np.add.at(out, targets[lo:hi], rows[srcs[lo:hi]])
        np.add.at(counts, targets[lo:hi], 1)
    nz = counts > 0
    out[nz] /= counts[nz, None]
    return out, counts


def spmm_csr(indptr, indices, data, dense):
    """Weighted CSR matrix times dense matrix."""
    n = indptr.shape[0] - 1
    out = np.zeros((n, dense.shape[1]), dtype=np.float64)
    targets = _edge_targets(indptr, n)
    for lo in range(0, targets.shape[0], _CHUNK):
        hi = lo + _CHUNK
        np.add.at(
            out,
            targets[lo:hi],
            data[lo:hi, None] * dense[indices[lo:hi]],
        )
    return out


def _expand_rows(indptr, indices, row_ids):
    starts = indptr[row_ids]
    lens = indptr[row_ids + 1] - starts
    total = int(lens.sum())
    if total == 0:
        return (
            np.zeros(0, dtype=np.int64),
            np.zeros(0, dtype=np.int64),
        )
    pos = np.repeat(np.arange(row_ids.shape[0], dtype=np.int64), lens)
    base = np.repeat(np.cumsum(lens) - lens, lens)
    gather = np.repeat(starts, lens) + (np.arange(total, dtype=np.int64) - base)
    return pos, indices[gather]


def csr_rows_matmul(indptr, indices, row_ids, weight):
    """Rows of a binary CSR matrix times a dense weight: out[b] = sum_j W[j].

    ``row_ids`` selects which CSR rows form the batch; the implicit row
    values are 1.0.
    """
    out = np.zeros((row_ids.shape[0], weight.shape[1]), dtype=np.float64)
    pos, cols = _expand_rows(indptr, indices, row_ids)
    for lo in range(0, pos.shape[0], _CHUNK):
        hi = lo + _CHUNK
        np.add.at(out, pos[lo:hi], weight[cols[lo:hi]])
    return out


def csr_rows_matmul_t_add(indptr, indices, row_ids, grad, out_dw):
    """Accumulate the transpose product into ``out_dw``: dW[j] += grad[b]."""
    pos, cols = _expand_rows(indptr, indices, row_ids)
    for lo in range(0, pos.shape[0], _CHUNK):
        hi = lo + _CHUNK
        np.add.at(out_dw, cols[lo:hi], grad[pos[lo:hi]])
    return out_dw


def square_support(indptr, indices, n):
    """Support of the squared adjacency with 2-path counts.

    Returns CSR arrays (indptr2, indices2, counts2) where counts2[e] is
    the number of length-2 paths i -> j -> k for target row i and column
    k.  Diagonal entries are included; callers filter as needed.
    """
    out_indptr = np.zeros(n + 1, dtype=np.int64)
    chunks_idx = []
    chunks_cnt = []
    deg = np.diff(indptr)
    # budget chunks of source nodes so that the expanded 2-path list
    # stays within _CHUNK entries
    second = deg[indices] if indices.shape[0] else np.zeros(0, dtype=np.int64)
    work_per_node = np.zeros(n, dtype=np.int64)
    np.add.at(work_per_node, _edge_targets(indptr, n), second)
    lo = 0
    while lo < n:
        hi = lo
        budget = 0
        while hi < n and (budget == 0 or budget + work_per_node[hi] <= _CHUNK):
            budget += work_per_node[hi]
            hi += 1
        i_pos, mids = _expand_rows(
            indptr, indices, np.arange(lo, hi, dtype=np.int64)
        )
        p2_pos, ks = _expand_rows(indptr, indices, mids)
        rows2 = i_pos[p2_pos] + lo
        keys = rows2 * n + ks
        uniq, counts = np.unique(keys, return_counts=True)
        rows_u = uniq // n
        np.add.at(out_indptr[1:], rows_u, 1)
        chunks_idx.append(uniq % n)
        chunks_cnt.append(counts.astype(np.int64))
        lo = hi
    np.cumsum(out_indptr, out=out_indptr)
    if chunks_idx:
        indices2 = np.concatenate(chunks_idx)
        counts2 = np.concatenate(chunks_cnt)
    else:
        indices2 = np.zeros(0, dtype=np.int64)
        counts2 = np.zeros(0, dtype=np.int64)
    return out_indptr, indices2, counts2

# cython: language_level=3
"""Compiled CSR kernels; semantics match ``_pykern`` exactly."""

from libc.stdlib cimport qsort

import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "c"


cdef int _cmp_long(const void* a, const void* b) noexcept nogil:
    cdef long x = (<const long*> a)[0]
    cdef long y = (<const long*> b)[0]
    if x < y:
        return -1
    if x > y:
        return 1
    return 0


def label_mean_csr(const long[::1] indptr, const long[::1] indices,
                   const long[::1] labels,
                   const unsigned char[::1] source_mask, int c):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    out_arr = np.zeros((n, c), dtype=np.float64)
    counts_arr = np.zeros(n, dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef long[::1] counts = counts_arr
    cdef Py_ssize_t i, e
    cdef long j
    with nogil:
        for i in range(n):
            for e in range(indptr[i], indptr[i + 1]):
                j = indices[e]
                if source_mask[j]:
                    out[i, labels[j]] += 1.0
                    counts[i] += 1
            if counts[i] > 0:
                for e in range(c):
                    out[i, e] /= counts[i]
    return out_arr, counts_arr


def row_mean_csr(const long[::1] indptr, const long[::1] indices,
                 const double[:, ::1] rows, source_mask=None):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t k = rows.shape[1]
    out_arr = np.zeros((n, k), dtype=np.float64)
    counts_arr = np.zeros(n, dtype=np.int64)
    cdef double[:, ::1] out = out_arr
    cdef long[::1] counts = counts_arr
    cdef const unsigned char[::1] mask
    cdef bint use_mask = source_mask is not None
    if use_mask:
        mask = source_mask
    else:
        mask = np.empty(0, dtype=np.uint8)
    cdef Py_ssize_t i, e, d
    cdef long j
    with nogil:
        for i in range(n):
            for e in range(indptr[i], indptr[i + 1]):
                j = indices[e]
                if use_mask and not mask[j]:
                    continue
                for d in range(k):
                    out[i, d] += rows[j, d]
                counts[i] += 1
            if counts[i] > 0:
                for d in range(k):
                    out[i, d] /= counts[i]
    return out_arr, counts_arr


def spmm_csr(const long[::1] indptr, const long[::1] indices,
             const double[::1] data, const double[:, ::1] dense):
    cdef Py_ssize_t n = indptr.shape[0] - 1
    cdef Py_ssize_t k = dense.shape[1]
    out_arr = np.zeros((n, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, e, d
    cdef long j
    cdef double w
    with nogil:
        for i in range(n):
            for e in range(indptr[i], indptr[i + 1]):
                j = indices[e]
                w = data[e]
                for d in range(k):
                    out[i, d] += w * dense[j, d]
    return out_arr


def csr_rows_matmul(const long[::1] indptr, const long[::1] indices,
                    const long[::1] row_ids, const double[:, ::1] weight):
    cdef Py_ssize_t b = row_ids.shape[0]
    cdef Py_ssize_t k = weight.shape[1]
    out_arr = np.zeros((b, k), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t p, e, d
    cdef long i
    with nogil:
        for p in range(b):
            i = row_ids[p]
            for e in range(indptr[i], indptr[i + 1]):
                for d in range(k):
                    out[p, d] += weight[indices[e], d]
    return out_arr


def csr_rows_matmul_t_add(const long[::1] indptr, const long[::1] indices,
                          const long[::1] row_ids, const double[:, ::1] grad,
                          double[:, ::1] out_dw):
    cdef Py_ssize_t b = row_ids.shape[0]
    cdef Py_ssize_t k = grad.shape[1]
    cdef Py_ssize_t p, e, d
    cdef long i, j
    with nogil:
        for p in range(b):
            i = row_ids[p]
            for e in range(indptr[i], indptr[i + 1]):
                j = indices[e]
                for d in range(k):
                    out_dw[j, d] += grad[p, d]
    return np.asarray(out_dw)


def square_support(const long[::1] indptr, const long[::1] indices, long n):
    cdef long[::1] scratch = np.zeros(n, dtype=np.int64)
    cdef long[::1] touched = np.empty(n, dtype=np.int64)
    out_indptr_arr = np.zeros(n + 1, dtype=np.int64)
    cdef long[::1] out_indptr = out_indptr_arr
    cdef Py_ssize_t i, e, e2, t
    cdef long j, kk, ntouch, nnz = 0
    # first pass: nnz per row
    with nogil:
        for i in range(n):
            ntouch = 0
            for e in range(indptr[i], indptr[i + 1]):
                j = indices[e]
                for e2 in range(indptr[j], indptr[j + 1]):
                    kk = indices[e2]
                    if scratch[kk] == 0:
                        touched[ntouch] = kk
                        ntouch += 1
                    scratch[kk] += 1
            for t in range(ntouch):
                scratch[touched[t]] = 0
            out_indptr[i + 1] = out_indptr[i] + ntouch
            nnz += ntouch
    indices2_arr = np.empty(nnz, dtype=np.int64)
    counts2_arr = np.empty(nnz, dtype=np.int64)
    cdef long[::1] indices2 = indices2_arr
    cdef long[::1] counts2 = counts2_arr
    cdef long base
    with nogil:
        for i in range(n):
            ntouch = 0
            for e in range(indptr[i], indptr[i + 1]):
                j = indices[e]
                for e2 in range(indptr[j], indptr[j + 1]):
                    kk = indices[e2]
                    if scratch[kk] == 0:
                        touched[ntouch] = kk
                        ntouch += 1
                    scratch[kk] += 1
            base = out_indptr[i]
            if ntouch > 0:
                qsort(&touched[0], ntouch, sizeof(long), _cmp_long)
            for t in range(ntouch):
                kk = touched[t]
                indices2[base + t] = kk
                counts2[base + t] = scratch[kk]
                scratch[kk] = 0
    return out_indptr_arr, indices2_arr, counts2_arr

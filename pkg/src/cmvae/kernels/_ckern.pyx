# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend.

Matmul/affine go through BLAS dgemm (same BLAS numpy links against);
elementwise ops and reductions are fused C loops. Reductions accumulate
strictly left-to-right in row-major order, so results are reproducible
bit-for-bit across runs.
"""

import numpy as np

from libc.math cimport exp as c_exp, log as c_log, sqrt as c_sqrt
from scipy.linalg.cython_blas cimport dgemm

NAME = "c"


cdef void _gemm(const double[:, ::1] a, const double[:, ::1] b, double[:, ::1] c,
                bint trans_a, bint trans_b, int m, int n, int k):
    # Row-major C = op(A)·op(B) computed as column-major C^T = op(B)^T·op(A)^T.
    # A row-major buffer read column-major is its own transpose, so the
    # transpose flags carry over unchanged and the operand order swaps.
    cdef char fa = b'T' if trans_a else b'N'
    cdef char fb = b'T' if trans_b else b'N'
    cdef int lda = a.shape[1]
    cdef int ldb = b.shape[1]
    cdef int ldc = n
    cdef double alpha = 1.0, beta = 0.0
    dgemm(&fb, &fa, &n, &m, &k, &alpha, <double*>&b[0, 0], &ldb,
          <double*>&a[0, 0], &lda, &beta, &c[0, 0], &ldc)


def matmul(const double[:, ::1] a, const double[:, ::1] b, bint trans_a=False, bint trans_b=False):
    cdef int m = a.shape[1] if trans_a else a.shape[0]
    cdef int k = a.shape[0] if trans_a else a.shape[1]
    cdef int k2 = b.shape[1] if trans_b else b.shape[0]
    cdef int n = b.shape[0] if trans_b else b.shape[1]
    if k != k2:
        raise ValueError(f"matmul inner dims differ: {k} vs {k2}")
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] c = out
    _gemm(a, b, c, trans_a, trans_b, m, n, k)
    return out


def affine(const double[:, ::1] x, const double[:, ::1] w, const double[:, ::1] b):
    cdef int m = x.shape[0], k = x.shape[1], n = w.shape[1]
    cdef Py_ssize_t i, j
    out = np.empty((m, n), dtype=np.float64)
    cdef double[:, ::1] c = out
    _gemm(x, w, c, False, False, m, n, k)
    for i in range(m):
        for j in range(n):
            c[i, j] += b[0, j]
    return out


def col_sum(const double[:, ::1] x):
    cdef Py_ssize_t i, j
    cdef int r = x.shape[0], c = x.shape[1]
    out = np.zeros((1, c), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(r):
        for j in range(c):
            o[0, j] += x[i, j]
    return out


def relu(const double[:, ::1] x):
    cdef Py_ssize_t i, j
    cdef int r = x.shape[0], c = x.shape[1]
    out = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(r):
        for j in range(c):
            o[i, j] = x[i, j] if x[i, j] > 0.0 else 0.0
    return out


def relu_bwd(const double[:, ::1] x, const double[:, ::1] g):
    # Subgradient at exactly 0 is 0.
    cdef Py_ssize_t i, j
    cdef int r = x.shape[0], c = x.shape[1]
    out = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(r):
        for j in range(c):
            o[i, j] = g[i, j] if x[i, j] > 0.0 else 0.0
    return out


def exp(const double[:, ::1] x):
    cdef Py_ssize_t i, j
    cdef int r = x.shape[0], c = x.shape[1]
    out = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(r):
        for j in range(c):
            o[i, j] = c_exp(x[i, j])
    return out


def log(const double[:, ::1] x):
    cdef Py_ssize_t i, j
    cdef int r = x.shape[0], c = x.shape[1]
    out = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(r):
        for j in range(c):
            o[i, j] = c_log(x[i, j])
    return out


def sqrt(const double[:, ::1] x):
    cdef Py_ssize_t i, j
    cdef int r = x.shape[0], c = x.shape[1]
    out = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(r):
        for j in range(c):
            o[i, j] = c_sqrt(x[i, j])
    return out


def add(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t i, j
    cdef int r = a.shape[0], c = a.shape[1]
    out = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(r):
        for j in range(c):
            o[i, j] = a[i, j] + b[i, j]
    return out


def sub(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t i, j
    cdef int r = a.shape[0], c = a.shape[1]
    out = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(r):
        for j in range(c):
            o[i, j] = a[i, j] - b[i, j]
    return out


def mul(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t i, j
    cdef int r = a.shape[0], c = a.shape[1]
    out = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(r):
        for j in range(c):
            o[i, j] = a[i, j] * b[i, j]
    return out


def div(const double[:, ::1] a, const double[:, ::1] b):
    cdef Py_ssize_t i, j
    cdef int r = a.shape[0], c = a.shape[1]
    out = np.empty((r, c), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(r):
        for j in range(c):
            o[i, j] = a[i, j] / b[i, j]
    return out


def scale(const double[:, ::1] x, double c):
    cdef Py_ssize_t i, j
    cdef int r = x.shape[0], cc = x.shape[1]
    out = np.empty((r, cc), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(r):
        for j in range(cc):
            o[i, j] = x[i, j] * c
    return out


def add_scalar(const double[:, ::1] x, double c):
    cdef Py_ssize_t i, j
    cdef int r = x.shape[0], cc = x.shape[1]
    out = np.empty((r, cc), dtype=np.float64)
    cdef double[:, ::1] o = out
    for i in range(r):
        for j in range(cc):
            o[i, j] = x[i, j] + c
    return out


def total_sum(const double[:, ::1] x):
    cdef Py_ssize_t i, j
    cdef double acc = 0.0
    for i in range(x.shape[0]):
        for j in range(x.shape[1]):
            acc += x[i, j]
    return acc


def topk_offdiag(const double[:, ::1] scores, int k):
    """Per-row indices of the k largest off-diagonal entries.

    Ties break toward the lower column index (strict comparisons: an equal
    score never displaces an earlier entry).
    """
    cdef int b = scores.shape[0]
    cdef Py_ssize_t i, j, pos
    cdef int cnt
    cdef double s
    out = np.empty((b, k), dtype=np.int64)
    cdef long long[:, ::1] idxs = out
    vals_arr = np.empty(k, dtype=np.float64)
    cdef double[::1] vals = vals_arr
    for i in range(b):
        cnt = 0
        for j in range(b):
            if j == i:
                continue
            s = scores[i, j]
            if cnt < k:
                pos = cnt
                while pos > 0 and s > vals[pos - 1]:
                    vals[pos] = vals[pos - 1]
                    idxs[i, pos] = idxs[i, pos - 1]
                    pos -= 1
                vals[pos] = s
                idxs[i, pos] = j
                cnt += 1
            elif s > vals[k - 1]:
                pos = k - 1
                while pos > 0 and s > vals[pos - 1]:
                    vals[pos] = vals[pos - 1]
                    idxs[i, pos] = idxs[i, pos - 1]
                    pos -= 1
                vals[pos] = s
                idxs[i, pos] = j
    return out

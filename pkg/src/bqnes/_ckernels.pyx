# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops.  Signatures mirror :mod:`bqnes._pykernels`."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def sparse_gram(const cnp.int64_t[::1] a_ptr, const cnp.int64_t[::1] a_keys, const double[::1] a_vals,
                const cnp.int64_t[::1] b_ptr, const cnp.int64_t[::1] b_keys, const double[::1] b_vals):
    # inverted index over b: feature -> (row, value), so work scales with matching pairs
    cdef Py_ssize_t na = a_ptr.shape[0] - 1
    cdef Py_ssize_t nb = b_ptr.shape[0] - 1
    out = np.zeros((na, nb), dtype=np.float64)
    if na == 0 or nb == 0 or a_keys.shape[0] == 0 or b_keys.shape[0] == 0:
        return out
    vocab, inv = np.unique(np.concatenate([np.asarray(a_keys), np.asarray(b_keys)]), return_inverse=True)
    inv = inv.reshape(-1).astype(np.int64)
    cdef cnp.int64_t[::1] a_col = inv[: a_keys.shape[0]]
    b_col_arr = inv[a_keys.shape[0]:]
    b_row_arr = np.repeat(np.arange(nb, dtype=np.int64), np.diff(np.asarray(b_ptr)))
    order = np.argsort(b_col_arr, kind="stable")
    cdef cnp.int64_t[::1] f_ptr = np.concatenate([[0], np.cumsum(np.bincount(b_col_arr, minlength=vocab.size))]).astype(np.int64)
    cdef cnp.int64_t[::1] f_row = b_row_arr[order]
    cdef double[::1] f_val = np.ascontiguousarray(np.asarray(b_vals)[order])
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, p, q, c
    cdef double v
    with nogil:
        for i in range(na):
            for p in range(a_ptr[i], a_ptr[i + 1]):
                c = a_col[p]
                v = a_vals[p]
                for q in range(f_ptr[c], f_ptr[c + 1]):
                    o[i, f_row[q]] += v * f_val[q]
    return out


def rbf_gram(const double[:, ::1] X, const double[:, ::1] Y, const double[::1] inv_ls, double signal_variance):
    # cross term through BLAS, then a fused distance + exp pass over the output
    cdef Py_ssize_t n = X.shape[0], m = Y.shape[0], d = X.shape[1]
    Xs = np.asarray(X) * np.asarray(inv_ls)
    Ys = np.asarray(Y) * np.asarray(inv_ls)
    cdef double[::1] xn = np.einsum("ij,ij->i", Xs, Xs)
    cdef double[::1] yn = np.einsum("ij,ij->i", Ys, Ys)
    out = np.ascontiguousarray(Xs @ Ys.T)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j
    cdef double s
    with nogil:
        for i in range(n):
            for j in range(m):
                s = xn[i] + yn[j] - 2.0 * o[i, j]
                if s < 0.0:
                    s = 0.0
                o[i, j] = signal_variance * exp(-0.5 * s)
    return out


def hamming_min(const cnp.int64_t[:, ::1] V, const cnp.int64_t[:, ::1] anchors):
    cdef Py_ssize_t n = V.shape[0], k = anchors.shape[0], d = V.shape[1]
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] o = out
    cdef Py_ssize_t i, a, j
    cdef cnp.int64_t best, dist
    with nogil:
        for i in range(n):
            best = d + 1
            for a in range(k):
                dist = 0
                for j in range(d):
                    if V[i, j] != anchors[a, j]:
                        dist += 1
                        if dist >= best:
                            break
                if dist < best:
                    best = dist
            o[i] = best
    return out

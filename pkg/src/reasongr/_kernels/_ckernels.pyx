# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; see ``_pykernels`` for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, rint

cnp.import_array()

DEF QMAX = 7


def quantize_blocks(flat, Py_ssize_t block_size):
    cdef const double[::1] x = np.ascontiguousarray(flat, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t n_blocks = (n + block_size - 1) // block_size
    scales_arr = np.zeros(n_blocks, dtype=np.float64)
    codes_arr = np.zeros(n, dtype=np.int8)
    cdef double[::1] scales = scales_arr
    cdef cnp.int8_t[::1] codes = codes_arr
    cdef Py_ssize_t b, i, lo, hi
    cdef double absmax, s, q
    for b in range(n_blocks):
        lo = b * block_size
        hi = min(lo + block_size, n)
        absmax = 0.0
        for i in range(lo, hi):
            if fabs(x[i]) > absmax:
                absmax = fabs(x[i])
        if absmax == 0.0:
            continue
        s = absmax / QMAX
        scales[b] = s
        for i in range(lo, hi):
            q = rint(x[i] / s)
            if q > QMAX:
                q = QMAX
            elif q < -QMAX:
                q = -QMAX
            codes[i] = <cnp.int8_t>q
    return codes_arr, scales_arr


def dequantize_blocks(codes_in, scales_in, Py_ssize_t block_size):
    cdef const cnp.int8_t[::1] codes = np.ascontiguousarray(codes_in, dtype=np.int8)
    cdef const double[::1] scales = np.ascontiguousarray(scales_in, dtype=np.float64)
    cdef Py_ssize_t n = codes.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    for i in range(n):
        out[i] = <double>codes[i] * scales[i // block_size]
    return out_arr


def pack_nibbles(codes_in):
    cdef const cnp.int8_t[::1] codes = np.ascontiguousarray(codes_in, dtype=np.int8)
    cdef Py_ssize_t n = codes.shape[0]
    out_arr = np.zeros((n + 1) // 2, dtype=np.uint8)
    cdef cnp.uint8_t[::1] out = out_arr
    cdef Py_ssize_t i
    cdef cnp.uint8_t nib
    for i in range(n):
        nib = (<cnp.uint8_t>codes[i]) & 0xF
        if i % 2 == 0:
            out[i // 2] = nib
        else:
            out[i // 2] |= nib << 4
    return out_arr


def unpack_nibbles(packed_in, Py_ssize_t n):
    cdef const cnp.uint8_t[::1] packed = np.ascontiguousarray(packed_in, dtype=np.uint8)
    out_arr = np.empty(n, dtype=np.int8)
    cdef cnp.int8_t[::1] out = out_arr
    cdef Py_ssize_t i
    cdef int v
    for i in range(n):
        if i % 2 == 0:
            v = packed[i // 2] & 0xF
        else:
            v = packed[i // 2] >> 4
        if v > 7:
            v -= 16
        out[i] = <cnp.int8_t>v
    return out_arr


def bm25_scores(indptr_in, doc_ids_in, tfs_in, doc_len_in, idf_in, query_terms_in,
                double k1, double b, double avgdl):
    cdef const cnp.int64_t[::1] indptr = np.ascontiguousarray(indptr_in, dtype=np.int64)
    cdef const cnp.int64_t[::1] doc_ids = np.ascontiguousarray(doc_ids_in, dtype=np.int64)
    cdef const double[::1] tfs = np.ascontiguousarray(tfs_in, dtype=np.float64)
    cdef const double[::1] doc_len = np.ascontiguousarray(doc_len_in, dtype=np.float64)
    cdef const double[::1] idf = np.ascontiguousarray(idf_in, dtype=np.float64)
    cdef const cnp.int64_t[::1] query = np.ascontiguousarray(query_terms_in, dtype=np.int64)
    scores_arr = np.zeros(doc_len.shape[0], dtype=np.float64)
    cdef double[::1] scores = scores_arr
    cdef Py_ssize_t qi, j, d
    cdef cnp.int64_t t
    cdef double tf, norm
    for qi in range(query.shape[0]):
        t = query[qi]
        if t < 0:
            continue
        for j in range(indptr[t], indptr[t + 1]):
            d = doc_ids[j]
            tf = tfs[j]
            norm = tf + k1 * (1.0 - b + b * doc_len[d] / avgdl)
            scores[d] += idf[t] * (tf * (k1 + 1.0)) / norm
    return scores_arr


def masked_argmax(logits_in, allowed_in):
    cdef const double[::1] logits = np.ascontiguousarray(logits_in, dtype=np.float64)
    cdef const cnp.int64_t[::1] allowed = np.ascontiguousarray(allowed_in, dtype=np.int64)
    cdef Py_ssize_t i, best = 0
    cdef double v, best_v = logits[allowed[0]]
    for i in range(1, allowed.shape[0]):
        v = logits[allowed[i]]
        if v > best_v:
            best_v = v
            best = i
    return int(allowed[best])

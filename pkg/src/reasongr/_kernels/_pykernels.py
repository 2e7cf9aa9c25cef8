"""Reference kernels in numpy.

Every routine here has a twin in ``_ckernels.pyx`` that performs the same
floating-point operations in the same order, so both backends agree bitwise.
"""

import numpy as np

QMAX = 7


def quantize_blocks(flat, block_size):
    flat = np.ascontiguousarray(flat, dtype=np.float64)
    n = flat.shape[0]
    n_blocks = -(-n // block_size)
    scales = np.zeros(n_blocks, dtype=np.float64)
    codes = np.zeros(n, dtype=np.int8)
    for b in range(n_blocks):
        block = flat[b * block_size:(b + 1) * block_size]
        absmax = np.abs(block).max()
        if absmax == 0.0:
            continue
        s = absmax / QMAX
        scales[b] = s
        codes[b * block_size:(b + 1) * block_size] = np.clip(np.rint(block / s), -QMAX, QMAX)
    return codes, scales


def dequantize_blocks(codes, scales, block_size):
    codes = np.asarray(codes, dtype=np.int8)
    per_elem = np.repeat(np.asarray(scales, dtype=np.float64), block_size)[: codes.shape[0]]
    return codes.astype(np.float64) * per_elem


def pack_nibbles(codes):
    """Two signed 4-bit codes per byte, low nibble first."""
    codes = np.asarray(codes, dtype=np.int8)
    u = (codes.astype(np.int16) & 0xF).astype(np.uint8)
    if u.shape[0] % 2:
        u = np.append(u, np.uint8(0))
    return (u[0::2] | (u[1::2] << 4)).astype(np.uint8)


def unpack_nibbles(packed, n):
    packed = np.asarray(packed, dtype=np.uint8)
    out = np.empty(packed.shape[0] * 2, dtype=np.int16)
    out[0::2] = packed & 0xF
    out[1::2] = packed >> 4
    out = out[:n]
    out[out > 7] -= 16
    return out.astype(np.int8)


def bm25_scores(indptr, doc_ids, tfs, doc_len, idf, query_terms, k1, b, avgdl):
    """Score every document for a query given CSR postings.

    ``query_terms`` holds term indices (repeats count again); negative
    indices mark out-of-corpus terms and are skipped.
    """
    doc_len = np.asarray(doc_len, dtype=np.float64)
    scores = np.zeros(doc_len.shape[0], dtype=np.float64)
    for t in query_terms:
        if t < 0:
            continue
        lo, hi = indptr[t], indptr[t + 1]
        docs = doc_ids[lo:hi]
        tf = tfs[lo:hi]
        norm = tf + k1 * (1.0 - b + b * doc_len[docs] / avgdl)
        scores[docs] += idf[t] * (tf * (k1 + 1.0)) / norm
    return scores


def masked_argmax(logits, allowed):
    """Index in ``allowed`` (ascending ids) with the largest logit; first wins ties."""
    vals = np.asarray(logits, dtype=np.float64)[allowed]
    return int(allowed[int(np.argmax(vals))])

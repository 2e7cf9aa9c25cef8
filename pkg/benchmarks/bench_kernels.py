"""Time the compiled and pure-Python kernel backends on the same inputs.

    python benchmarks/bench_kernels.py [--repeat N]

Prints one row per kernel with the median time of each backend and the speedup.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from reasongr import _kernels
from reasongr.baseline import build_index
from reasongr.synthetic import synthetic_corpus


def _median_time(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases(rng: np.random.Generator):
    flat = rng.standard_normal(256 * 256)
    codes, scales = _kernels.python.quantize_blocks(flat, 64)
    packed = _kernels.python.pack_nibbles(codes)
    index = build_index(synthetic_corpus(200, 0))
    query = index.term_ids(list(index.terms)[:40])
    logits = rng.standard_normal(5000)
    allowed = np.sort(rng.choice(5000, 400, replace=False)).astype(np.int64)
    return {
        "quantize_blocks (65536 x f64, block 64)": lambda k: k.quantize_blocks(flat, 64),
        "dequantize_blocks": lambda k: k.dequantize_blocks(codes, scales, 64),
        "pack_nibbles": lambda k: k.pack_nibbles(codes),
        "unpack_nibbles": lambda k: k.unpack_nibbles(packed, codes.size),
        "bm25_scores (200 docs, 40 terms)": lambda k: k.bm25_scores(
            index.indptr, index.doc_ids, index.tfs, index.doc_len, index.idf, query, index.k1, index.b,
            index.avgdl),
        "masked_argmax (|V| 5000, 400 allowed)": lambda k: k.masked_argmax(logits, allowed),
    }


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=50)
    args = parser.parse_args(argv)
    if _kernels.compiled is None:
        print("compiled backend unavailable; build the extension first (pip install -e .)")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':42s} {'cython (us)':>12s} {'python (us)':>12s} {'speedup':>8s}")
    for name, call in cases(rng).items():
        tc = _median_time(lambda: call(_kernels.compiled), args.repeat) * 1e6
        tp = _median_time(lambda: call(_kernels.python), args.repeat) * 1e6
        print(f"{name:42s} {tc:12.1f} {tp:12.1f} {tp / tc:8.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

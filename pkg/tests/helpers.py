"""Shared builders for the test suite."""

from __future__ import annotations

import string
import zlib

import numpy as np

from reasongr.corpus import DocId, DocIdRegistry, Document
from reasongr.model import ModelDims, init_adapters, init_model


def make_doc(raw_id="ADI/2009/page_49.pdf-1", pre=(), post=(), table=(), question=None) -> Document:
    company, year = raw_id.split("/")[:2]
    return Document(raw_id, company, year, tuple(pre), tuple(post),
                    tuple(tuple(r) for r in table), question)


def random_word(rng: np.random.Generator, lo=3, hi=7) -> str:
    n = int(rng.integers(lo, hi))
    return "".join(rng.choice(list(string.ascii_lowercase), size=n))


def random_table(rng: np.random.Generator, max_rows=6, max_cols=6) -> list[list[str]]:
    rows, cols = int(rng.integers(2, max_rows + 1)), int(rng.integers(2, max_cols + 1))
    table = [[""] + [str(2000 + c) for c in range(1, cols)]]
    for _ in range(rows - 1):
        table.append([random_word(rng)] + [f"${int(rng.integers(0, 9999))}" if rng.random() > 0.1 else ""
                                            for _ in range(cols - 1)])
    return table


def random_registry(rng: np.random.Generator, n_docs: int, alphabet: int = 4,
                    max_len: int = 4) -> DocIdRegistry:
    """Registry of distinct random docids over a small component alphabet (shared prefixes likely)."""
    if n_docs > sum(alphabet ** k for k in range(1, max_len + 1)):
        raise ValueError("not enough distinct docids for this alphabet")
    comps = [f"c{i}" for i in range(alphabet)]
    reg = DocIdRegistry()
    seen = set()
    i = 0
    while len(reg) < n_docs:
        n = int(rng.integers(1, max_len + 1))
        docid = DocId(tuple(rng.choice(comps, size=n)))
        if docid.surface not in seen:
            seen.add(docid.surface)
            reg.add(f"doc{i}", docid)
            i += 1
    return reg


def tiny_model(rng: np.random.Generator, vocab=12, d=8, d_ff=16, rank=2, quantize=True,
               perturb_b=True, block_size=16, targets=None):
    """Small frozen model with adapters; ``perturb_b`` makes every LoRA gradient nonzero."""
    dims = ModelDims(vocab, d, d_ff, max_src_len=16, max_tgt_len=12)
    model = init_model(dims, rng, block_size=block_size, quantize=quantize)
    kwargs = {} if targets is None else {"targets": targets}
    adapters = init_adapters(model, rank, rng, **kwargs)
    if perturb_b:
        for ad in adapters.values():
            ad.B[...] = 0.3 * rng.standard_normal(ad.B.shape)
    return model, adapters


def random_batch_ids(rng: np.random.Generator, vocab: int, n: int, lo=5, max_len=6):
    """Token ids avoiding specials (ids below 5)."""
    return [rng.integers(lo, vocab, size=int(rng.integers(1, max_len + 1))).tolist() for _ in range(n)]


def penalized_batch_loss(model, adapters, batch, weights):
    from reasongr.loss import sequence_penalty
    from reasongr.model import forward_backward

    return forward_backward(model, adapters, batch,
                            penalty=lambda lg, tg: sequence_penalty(lg, tg, weights)).loss


def lora_gradient_check(model, adapters, batch, weights, rng, n_coords=6, h=1e-5) -> float:
    """Max relative error between analytic and central-difference LoRA gradients.

    Samples ``n_coords`` coordinates of every A and B. Relative error uses
    ``max(|a|, |n|, 1e-7)`` as denominator so vanishing gradients compare
    on an absolute scale.
    """
    from reasongr.loss import sequence_penalty
    from reasongr.model import forward_backward

    res = forward_backward(model, adapters, batch,
                           penalty=lambda lg, tg: sequence_penalty(lg, tg, weights))
    worst = 0.0
    for name, ad in adapters.items():
        for which, param, grad in (("A", ad.A, res.grads[name][0]), ("B", ad.B, res.grads[name][1])):
            flat = param.reshape(-1)
            for i in rng.choice(flat.size, size=min(n_coords, flat.size), replace=False):
                old = flat[i]
                flat[i] = old + h
                up = penalized_batch_loss(model, adapters, batch, weights)
                flat[i] = old - h
                down = penalized_batch_loss(model, adapters, batch, weights)
                flat[i] = old
                num = (up - down) / (2 * h)
                ana = grad.reshape(-1)[i]
                worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-7))
    return worst


def random_bm25_corpus(rng: np.random.Generator, n_docs: int, vocab_size: int = 12):
    words = [f"w{i}" for i in range(vocab_size)]
    docs = []
    for i in range(n_docs):
        n = int(rng.integers(1, 15))
        docs.append(make_doc(f"C{i}/2010/p{i}.pdf", pre=[" ".join(rng.choice(words, n))]))
    return docs, words


def bm25_direct(docs, query_terms, k1=1.5, b=0.75):
    """Textbook Okapi BM25 computed from scratch for every document."""
    import math
    from collections import Counter

    from reasongr.baseline import bm25_terms

    bags = [Counter(bm25_terms(d.text)) for d in docs]
    n = len(docs)
    lens = [sum(c.values()) for c in bags]
    avgdl = sum(lens) / n or 1.0
    out = []
    for bag, dl in zip(bags, lens):
        s = 0.0
        for t in query_terms:
            df = sum(1 for c in bags if t in c)
            if bag.get(t, 0) == 0:
                continue
            idf = math.log((n - df + 0.5) / (df + 0.5) + 1)
            tf = bag[t]
            s += idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * dl / avgdl))
        out.append(s)
    return out


class RandomScorer:
    """Deterministic pseudo-random logits keyed on the prefix."""

    def __init__(self, vocab_size, seed):
        self.v, self.seed = vocab_size, seed
        self.calls = 0

    def __call__(self, prefix):
        self.calls += 1
        key = zlib.crc32(np.asarray(prefix, dtype=np.int64).tobytes()) ^ self.seed
        return np.random.default_rng(key).standard_normal(self.v) * 3

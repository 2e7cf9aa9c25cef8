"""Okapi BM25 over document prose plus flattened table segments."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .corpus import STOPWORDS, Document, tokenize


def bm25_terms(text: str) -> list[str]:
    """Keyword-style normalization: lowercase, no punctuation, no stopwords."""
    return [t for t in tokenize(text) if t not in STOPWORDS]


def bm25_idf(n_docs: int, df: int) -> float:
    return math.log((n_docs - df + 0.5) / (df + 0.5) + 1.0)


@dataclass
class InvertedIndex:
    raw_ids: list[str]
    terms: dict[str, int]
    indptr: np.ndarray     # CSR row pointer per term
    doc_ids: np.ndarray    # postings, sorted by doc index within each term
    tfs: np.ndarray
    doc_len: np.ndarray
    idf: np.ndarray
    avgdl: float
    k1: float = 1.5
    b: float = 0.75

    @property
    def n_docs(self) -> int:
        return len(self.raw_ids)

    def postings(self, term: str) -> list[tuple[int, int]]:
        t = self.terms.get(term)
        if t is None:
            return []
        lo, hi = self.indptr[t], self.indptr[t + 1]
        return list(zip(self.doc_ids[lo:hi].tolist(), self.tfs[lo:hi].astype(int).tolist()))

    def term_ids(self, query_terms: Sequence[str]) -> np.ndarray:
        return np.array([self.terms.get(t, -1) for t in query_terms], dtype=np.int64)


def build_index(docs: Sequence[Document], k1: float = 1.5, b: float = 0.75) -> InvertedIndex:
    if not docs:
        raise ValueError("cannot index an empty corpus")
    counts = [Counter(bm25_terms(d.text)) for d in docs]
    terms: dict[str, int] = {}
    for c in counts:
        for t in c:
            terms.setdefault(t, len(terms))
    postings: list[list[tuple[int, int]]] = [[] for _ in terms]
    for i, c in enumerate(counts):
        for t, tf in c.items():
            postings[terms[t]].append((i, tf))

    indptr = np.zeros(len(terms) + 1, dtype=np.int64)
    indptr[1:] = np.cumsum([len(p) for p in postings])
    doc_ids = np.array([d for p in postings for d, _ in p], dtype=np.int64)
    tfs = np.array([tf for p in postings for _, tf in p], dtype=np.float64)
    doc_len = np.array([sum(c.values()) for c in counts], dtype=np.float64)
    n = len(docs)
    idf = np.array([bm25_idf(n, len(p)) for p in postings], dtype=np.float64)
    avgdl = float(doc_len.mean()) or 1.0
    return InvertedIndex([d.raw_id for d in docs], terms, indptr, doc_ids, tfs, doc_len, idf, avgdl, k1, b)


def score_all(index: InvertedIndex, query_terms: Sequence[str]) -> np.ndarray:
    """BM25 score of every document; repeated query terms count again."""
    return _kernels.bm25_scores(index.indptr, index.doc_ids, index.tfs, index.doc_len, index.idf,
                                index.term_ids(query_terms), index.k1, index.b, index.avgdl)


def score(index: InvertedIndex, query_terms: Sequence[str], doc: int) -> float:
    if not 0 <= doc < index.n_docs:
        raise IndexError(f"doc index {doc} out of range")
    total = 0.0
    length_norm = index.k1 * (1.0 - index.b + index.b * index.doc_len[doc] / index.avgdl)
    for term in query_terms:
        t = index.terms.get(term)
        if t is None:
            continue
        lo, hi = index.indptr[t], index.indptr[t + 1]
        j = lo + int(np.searchsorted(index.doc_ids[lo:hi], doc))
        if j < hi and index.doc_ids[j] == doc:
            tf = index.tfs[j]
            total += index.idf[t] * (tf * (index.k1 + 1.0)) / (tf + length_norm)
    return float(total)


def retrieve_top1(index: InvertedIndex, query: str | Sequence[str]) -> str:
    """Best-scoring raw id; the lowest document index wins ties."""
    terms = bm25_terms(query) if isinstance(query, str) else list(query)
    return index.raw_ids[int(np.argmax(score_all(index, terms)))]

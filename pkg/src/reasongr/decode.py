"""Trie-constrained docid decoding.

Decoders consume a *scorer*: any callable mapping a decoder prefix (token
ids starting with BOS) to next-token logits over the vocabulary.
``ModelScorer`` wraps a model with a fixed encoded prompt; tests plug in
random or scripted scorers.

At a trie node the allowed tokens are its children, plus EOS when the node
ends a registered docid. Once ``max_len`` components are emitted, EOS is
forced at terminal nodes and otherwise the path is completed greedily among
children, so decoding always returns a registered docid.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .corpus import DocId, DocIdRegistry, DocIdTrie, TrieNode
from .loss import log_softmax
from .model.transformer import SeqModel, decode_batch, encode_batch, pad_batch
from .tokenizer import BOS, EOS, PAD, SEP, UNK, Vocab

Scorer = Callable[[Sequence[int]], np.ndarray]


@dataclass
class TokenNode:
    children: dict[int, "TokenNode"] = field(default_factory=dict)
    terminal: bool = False
    docid: DocId | None = None
    _allowed: np.ndarray | None = field(default=None, repr=False)

    @property
    def allowed(self) -> np.ndarray:
        """Ascending token ids permitted next (EOS included at terminals)."""
        if self._allowed is None:
            ids = sorted(self.children) + ([EOS] if self.terminal else [])
            self._allowed = np.array(sorted(ids), dtype=np.int64)
        return self._allowed


class TokenTrie:
    """The docid trie re-keyed by vocabulary ids."""

    def __init__(self, trie: DocIdTrie, vocab: Vocab):
        self.root = self._convert(trie.root, vocab)
        self.size = len(trie)

    @classmethod
    def from_registry(cls, registry: DocIdRegistry, vocab: Vocab) -> "TokenTrie":
        return cls(registry.trie, vocab)

    def _convert(self, node: TrieNode, vocab: Vocab) -> TokenNode:
        out = TokenNode(terminal=node.terminal, docid=node.docid)
        for comp, child in node.children.items():
            tok = vocab.id(comp)
            if tok == UNK:
                raise ValueError(f"docid component {comp!r} missing from vocabulary")
            out.children[tok] = self._convert(child, vocab)
        return out

    def paths(self) -> list[tuple[tuple[int, ...], DocId]]:
        out = []
        stack = [(self.root, ())]
        while stack:
            node, path = stack.pop()
            if node.terminal:
                out.append((path, node.docid))
            for tok, child in node.children.items():
                stack.append((child, path + (tok,)))
        return out


def _allowed(node: TokenNode, depth: int, max_len: int) -> np.ndarray:
    if depth >= max_len:
        if node.terminal:
            return np.array([EOS], dtype=np.int64)
        return np.array(sorted(node.children), dtype=np.int64)
    return node.allowed


class ModelScorer:
    """Next-token logits from a model for one encoded prompt."""

    def __init__(self, model: SeqModel, adapters, prompt: Sequence[int]):
        self.model = model
        self.adapters = adapters
        src, self.mask = pad_batch([list(prompt)])
        self.enc = encode_batch(model, adapters, src, self.mask)

    def __call__(self, prefix: Sequence[int]) -> np.ndarray:
        tgt = np.asarray(prefix, dtype=np.int64)[None]
        return decode_batch(self.model, self.adapters, self.enc, self.mask, tgt)[0, -1]


def constrained_greedy(scorer: Scorer, trie: TokenTrie, max_len: int = 16,
                       prefix: Sequence[int] = (BOS,)) -> DocId:
    node = trie.root
    emitted: list[int] = []
    while True:
        allowed = _allowed(node, len(emitted), max_len)
        if len(allowed) == 1:
            tok = int(allowed[0])
        else:
            tok = _kernels.masked_argmax(scorer(list(prefix) + emitted), allowed)
        if tok == EOS:
            return node.docid
        node = node.children[tok]
        emitted.append(tok)


@dataclass
class BeamHypothesis:
    tokens: list[int]
    logp: float
    node: TokenNode
    finished: bool = False

    @property
    def score(self) -> float:
        """Log-probability per emitted token (EOS counts)."""
        return self.logp / max(len(self.tokens), 1)

    @property
    def docid(self) -> DocId | None:
        return self.node.docid if self.finished else None


def beam_search(scorer: Scorer, trie: TokenTrie, beam_width: int = 4, max_len: int = 16,
                prefix: Sequence[int] = (BOS,)) -> list[BeamHypothesis]:
    """Finished hypotheses ranked by length-normalized log-probability.

    Pruning keeps the ``beam_width`` best cumulative scores per step;
    ties go to the earlier hypothesis, then the lower token id.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    active = [BeamHypothesis([], 0.0, trie.root)]
    finished: list[BeamHypothesis] = []
    while active:
        candidates = []
        for h_idx, hyp in enumerate(active):
            allowed = _allowed(hyp.node, len(hyp.tokens), max_len)
            lp = log_softmax(np.asarray(scorer(list(prefix) + hyp.tokens), dtype=np.float64))
            for tok in allowed.tolist():
                candidates.append((-(hyp.logp + lp[tok]), h_idx, tok))
        candidates.sort()
        survivors = []
        for neg_logp, h_idx, tok in candidates[:beam_width]:
            parent = active[h_idx]
            if tok == EOS:
                finished.append(BeamHypothesis(parent.tokens + [EOS], -neg_logp, parent.node, True))
            else:
                survivors.append(BeamHypothesis(parent.tokens + [tok], -neg_logp, parent.node.children[tok]))
        active = survivors
    finished.sort(key=lambda h: -h.score)
    return finished


def constrained_beam(scorer: Scorer, trie: TokenTrie, beam_width: int = 4, max_len: int = 16,
                     prefix: Sequence[int] = (BOS,)) -> list[DocId]:
    return [h.docid for h in beam_search(scorer, trie, beam_width, max_len, prefix)]


def free_greedy(scorer: Scorer, max_len: int, prefix: Sequence[int] = (BOS,),
                stop: int = EOS) -> list[int]:
    """Unconstrained greedy decoding, for ablations and CoT traces."""
    banned = [PAD, BOS, UNK] + ([EOS] if stop != EOS else [])
    out: list[int] = []
    for _ in range(max_len):
        logits = np.array(scorer(list(prefix) + out), dtype=np.float64)
        logits[banned] = -np.inf
        tok = int(np.argmax(logits))
        if tok == stop:
            break
        out.append(tok)
    return out


def cot_decode(scorer: Scorer, trie: TokenTrie, vocab: Vocab, free_budget: int = 24,
               max_len: int = 16) -> tuple[str, DocId]:
    """Free reasoning up to SEP (forced once the budget runs out), then a constrained docid.

    A zero budget skips the reasoning phase and decodes directly from BOS.
    """
    if SEP >= len(vocab):
        raise ValueError("vocabulary lacks the separator token")
    if free_budget <= 0:
        return "", constrained_greedy(scorer, trie, max_len)
    trace = free_greedy(scorer, free_budget, stop=SEP)
    prefix = [BOS] + trace + [SEP]
    text = " ".join(vocab.itos[t] for t in trace)
    return text, constrained_greedy(scorer, trie, max_len, prefix=prefix)


def unconstrained_docid(scorer: Scorer, vocab: Vocab, max_len: int = 16,
                        prefix: Sequence[int] = (BOS,)) -> str:
    return "-".join(vocab.itos[t] for t in free_greedy(scorer, max_len, prefix))


def batch_constrained_greedy(model: SeqModel, adapters, prompts: Sequence[Sequence[int]],
                             trie: TokenTrie, max_len: int = 16) -> list[DocId]:
    """Constrained greedy for many prompts at once, stepping all rows together."""
    if not prompts:
        return []
    src, mask = pad_batch([list(p) for p in prompts])
    enc = encode_batch(model, adapters, src, mask)
    n = len(prompts)
    nodes: list[TokenNode] = [trie.root] * n
    done: list[DocId | None] = [None] * n
    prefix = np.full((n, 1), BOS, dtype=np.int64)
    depth = 0
    while any(d is None for d in done):
        need = [i for i in range(n) if done[i] is None and len(_allowed(nodes[i], depth, max_len)) > 1]
        logits = None
        if need:
            rows = np.array(need)
            logits = decode_batch(model, adapters, enc[rows], mask[rows], prefix[rows])[:, -1]
            row_of = {i: r for r, i in enumerate(need)}
        step = np.full((n, 1), PAD, dtype=np.int64)
        for i in range(n):
            if done[i] is not None:
                continue
            allowed = _allowed(nodes[i], depth, max_len)
            tok = int(allowed[0]) if len(allowed) == 1 else _kernels.masked_argmax(logits[row_of[i]], allowed)
            if tok == EOS:
                done[i] = nodes[i].docid
            else:
                nodes[i] = nodes[i].children[tok]
                step[i, 0] = tok
        prefix = np.concatenate([prefix, step], axis=1)
        depth += 1
    return done  # type: ignore[return-value]

"""Word-level vocabulary with docid components as atomic tokens."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Sequence

from .corpus import DocIdRegistry, Document, flatten_table, tokenize

PAD, BOS, EOS, UNK, SEP = 0, 1, 2, 3, 4
SPECIALS = ("<pad>", "<bos>", "<eos>", "<unk>", "=>")
SEP_MARKER = "=>"


class Vocab:
    def __init__(self, tokens: Sequence[str]):
        if tuple(tokens[: len(SPECIALS)]) != SPECIALS:
            raise ValueError("vocabulary must start with the special tokens")
        self.itos = list(tokens)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def to_json(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_json(cls, tokens: list[str]) -> "Vocab":
        return cls(tokens)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.itos, ensure_ascii=False))

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        return cls(json.loads(Path(path).read_text()))


def document_texts(doc: Document) -> list[str]:
    texts = list(doc.pre_text) + list(doc.post_text)
    texts.extend(seg.text for seg in flatten_table(doc))
    if doc.question:
        texts.append(doc.question)
    return texts


def build_vocab(docs: Iterable[Document], registry: DocIdRegistry,
                prompt_texts: Iterable[str] = ()) -> Vocab:
    """Ids follow first occurrence: docid components, then documents, then prompts."""
    tokens = list(SPECIALS)
    seen = set(tokens)

    def add(tok: str) -> None:
        if tok not in seen:
            seen.add(tok)
            tokens.append(tok)

    for _, docid in registry.items():
        for comp in docid.components:
            add(comp)
    for doc in docs:
        for text in document_texts(doc):
            for tok in tokenize(text):
                add(tok)
    for text in prompt_texts:
        for tok in tokenize(text):
            add(tok)
    return Vocab(tokens)


def text_tokens(text: str) -> list[str]:
    """Normalized tokens of ``text`` with the separator marker kept as one token."""
    out: list[str] = []
    for i, piece in enumerate(text.split(SEP_MARKER)):
        if i:
            out.append(SEP_MARKER)
        out.extend(tokenize(piece))
    return out


def encode(text: str, vocab: Vocab) -> list[int]:
    return [vocab.id(t) for t in text_tokens(text)]


def decode(ids: Iterable[int], vocab: Vocab, sep: str = " ") -> str:
    return sep.join(vocab.itos[i] for i in ids)


def encode_docid(surface: str, vocab: Vocab) -> list[int]:
    return [vocab.id(c) for c in surface.split("-")]


def decode_docid(ids: Iterable[int], vocab: Vocab) -> str:
    return decode(ids, vocab, sep="-")

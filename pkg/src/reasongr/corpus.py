"""Document ingestion, table flattening, keyword docids and the docid registry."""

from __future__ import annotations

import json
import logging
import math
import re
import string
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

logger = logging.getLogger(__name__)

# Fixed list so keyword extraction is reproducible across installs.
STOPWORDS = frozenset(
    """
    a about above after again against all am an and any are as at be because been
    before being below between both but by can could did do does doing down during
    each few for from further had has have having he her here hers herself him
    himself his how i if in into is it its itself just me more most my myself no nor
    not now of off on once only or other our ours ourselves out over own same she
    should so some such than that the their theirs them themselves then there these
    they this those through to too under until up very was we were what when where
    which while who whom why will with would you your yours yourself yourselves
    also may per million billion thousand total year years company
    """.split()
)

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)
_HYPHENS = re.compile(r"[-\u2010-\u2015]")


class CorpusError(ValueError):
    """Base class for corpus input errors."""


class CorpusParseError(CorpusError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class CorpusSchemaError(CorpusError):
    def __init__(self, key: str, index: int):
        super().__init__(f"element {index}: missing key {key!r}")
        self.key = key
        self.index = index


class DuplicateIdError(CorpusError):
    pass


class DocIdError(ValueError):
    pass


def normalize_token(word: str) -> str:
    """Lowercase and strip punctuation (hyphens included) from one word."""
    return _HYPHENS.sub("", word).translate(_PUNCT_TABLE).lower()


def tokenize(text: str) -> list[str]:
    """Split ``text`` into normalized word tokens.

    Hyphens act as word separators so that ``"adi-2009-hedge"`` yields three
    tokens; pure-punctuation words vanish.
    """
    out = []
    for word in _HYPHENS.sub(" ", text).split():
        tok = word.translate(_PUNCT_TABLE).lower()
        if tok:
            out.append(tok)
    return out


@dataclass(frozen=True)
class Document:
    raw_id: str
    company: str
    year: str
    pre_text: tuple[str, ...] = ()
    post_text: tuple[str, ...] = ()
    table: tuple[tuple[str, ...], ...] = ()
    question: str | None = None

    def __post_init__(self):
        if self.table:
            width = len(self.table[0])
            if width < 1 or any(len(row) != width for row in self.table):
                raise CorpusError(f"{self.raw_id}: table rows must have equal length >= 1")

    @property
    def text(self) -> str:
        """All prose plus flattened table cells, as one string."""
        parts = list(self.pre_text) + list(self.post_text)
        parts.extend(seg.text for seg in flatten_table(self))
        return " ".join(parts)


@dataclass(frozen=True)
class TableSegment:
    text: str
    parent_raw_id: str


@dataclass(frozen=True)
class DocId:
    components: tuple[str, ...]

    def __post_init__(self):
        for comp in self.components:
            if not comp or "-" in comp or any(ch.isspace() for ch in comp) or comp != comp.lower():
                raise DocIdError(f"invalid docid component {comp!r}")

    @property
    def surface(self) -> str:
        return "-".join(self.components)

    @classmethod
    def parse(cls, surface: str) -> "DocId":
        return cls(tuple(surface.split("-")))

    def __str__(self) -> str:
        return self.surface


def parse_raw_id(raw_id: str) -> tuple[str, str]:
    """Return (company, year) encoded positionally in a FinQA-style filename.

    Ids that do not look like ``COMPANY/YEAR/...`` fall back to
    ``("unk", "0000")`` and log a warning.
    """
    parts = raw_id.split("/")
    if len(parts) >= 2 and parts[0].strip():
        year = parts[1].strip()
        if year.isdigit() and len(year) == 4 and 1900 <= int(year) <= 2100:
            return parts[0].strip(), year
    logger.warning("non-conforming raw id %r; using company 'unk', year '0000'", raw_id)
    return "unk", "0000"


def _as_lines(value, key: str, index: int) -> tuple[str, ...]:
    if isinstance(value, str):
        return (value,)
    if not isinstance(value, list):
        raise CorpusError(f"element {index}: {key!r} must be a list of strings")
    return tuple(str(v) for v in value)


def document_from_record(record: dict, index: int = 0) -> Document:
    if not isinstance(record, dict):
        raise CorpusError(f"element {index}: expected an object")
    for key in ("id", "pre_text", "post_text", "table"):
        if key not in record:
            raise CorpusSchemaError(key, index)
    raw_id = str(record["id"])
    company, year = parse_raw_id(raw_id)
    table = record["table"]
    if not isinstance(table, list) or any(not isinstance(row, list) for row in table):
        raise CorpusError(f"element {index}: 'table' must be a list of rows")
    question = None
    qa = record.get("qa")
    if isinstance(qa, dict) and qa.get("question"):
        question = str(qa["question"])
    return Document(
        raw_id=raw_id,
        company=company,
        year=year,
        pre_text=_as_lines(record["pre_text"], "pre_text", index),
        post_text=_as_lines(record["post_text"], "post_text", index),
        table=tuple(tuple(str(c) for c in row) for row in table),
        question=question,
    )


def document_to_record(doc: Document) -> dict:
    record = {
        "id": doc.raw_id,
        "pre_text": list(doc.pre_text),
        "post_text": list(doc.post_text),
        "table": [list(row) for row in doc.table],
    }
    if doc.question is not None:
        record["qa"] = {"question": doc.question}
    return record


def parse_corpus(data: bytes | str) -> list[Document]:
    if isinstance(data, str):
        data = data.encode("utf-8")
    try:
        records = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise CorpusParseError(f"invalid UTF-8: {exc.reason}", exc.start) from exc
    except json.JSONDecodeError as exc:
        # JSONDecodeError.pos counts characters; convert to bytes.
        offset = len(exc.doc[: exc.pos].encode("utf-8"))
        raise CorpusParseError(f"malformed JSON: {exc.msg}", offset) from exc
    if not isinstance(records, list):
        raise CorpusParseError("top-level value must be an array", 0)

    docs = []
    seen: set[str] = set()
    for i, record in enumerate(records):
        doc = document_from_record(record, i)
        if doc.raw_id in seen:
            raise DuplicateIdError(f"element {i}: duplicate id {doc.raw_id!r}")
        seen.add(doc.raw_id)
        docs.append(doc)
    return docs


def ingest_corpus(path: str | Path) -> list[Document]:
    """Load a JSON array of FinQA-style records into Documents."""
    return parse_corpus(Path(path).read_bytes())


def flatten_table(doc: Document) -> list[TableSegment]:
    """One ``"row header | column header | value"`` segment per interior cell.

    Output is row-major; tables narrower or shorter than 2 yield nothing.
    """
    table = doc.table
    if len(table) < 2 or len(table[0]) < 2:
        return []
    header = [_cell(h) for h in table[0]]
    segments = []
    for row in table[1:]:
        row_header = _cell(row[0])
        for c in range(1, len(header)):
            segments.append(TableSegment(f"{row_header} | {header[c]} | {_cell(row[c])}", doc.raw_id))
    return segments


def _cell(value: str) -> str:
    return " ".join(value.replace("|", "/").split())


class KeywordExtractor:
    """TF-IDF keyword ranking over a fitted corpus.

    ``idf = ln((N + 1) / (df + 1)) + 1``; ties are broken by first occurrence.
    """

    def __init__(self, stopwords: Iterable[str] = STOPWORDS):
        self.stopwords = frozenset(stopwords)
        self.df: Counter[str] = Counter()
        self.n_docs = 0

    def _terms(self, text: str) -> list[str]:
        return [t for t in tokenize(text) if t not in self.stopwords]

    def fit(self, texts: Iterable[str]) -> "KeywordExtractor":
        self.df = Counter()
        self.n_docs = 0
        for text in texts:
            self.n_docs += 1
            self.df.update(set(self._terms(text)))
        return self

    def idf(self, term: str) -> float:
        return math.log((self.n_docs + 1) / (self.df.get(term, 0) + 1)) + 1.0

    def extract(self, text: str, k: int) -> list[str]:
        if k < 1:
            raise ValueError("k must be >= 1")
        terms = self._terms(text)
        if not terms:
            return []
        tf = Counter(terms)
        first: dict[str, int] = {}
        for i, t in enumerate(terms):
            first.setdefault(t, i)
        ranked = sorted(tf, key=lambda t: (-tf[t] * self.idf(t), first[t]))
        return ranked[:k]


def extract_keywords(text: str, k: int, extractor: KeywordExtractor) -> list[str]:
    return extractor.extract(text, k)


def normalize_component(value: str) -> str:
    return "".join(ch for ch in value.lower() if ch.isalnum())


def build_docid(doc: Document, keywords: Sequence[str], taken: set[str] | frozenset[str] = frozenset()) -> DocId:
    """Company and year, then keywords; ordinal suffixes resolve collisions."""
    company = normalize_component(doc.company)
    year = normalize_component(doc.year)
    if not company or not year:
        raise DocIdError(f"{doc.raw_id}: company or year empty after normalization")
    keywords = [normalize_component(k) for k in keywords]
    components = [company, year] + [k for k in keywords if k]
    docid = DocId(tuple(components))
    ordinal = 2
    while docid.surface in taken:
        docid = DocId(tuple(components + [str(ordinal)]))
        ordinal += 1
    return docid


@dataclass
class TrieNode:
    children: dict[str, "TrieNode"] = field(default_factory=dict)
    terminal: bool = False
    docid: DocId | None = None


class DocIdTrie:
    """Prefix tree over docid component sequences."""

    def __init__(self, docids: Iterable[DocId] = ()):
        self.root = TrieNode()
        self._size = 0
        for docid in docids:
            self.insert(docid)

    def __len__(self) -> int:
        return self._size

    def insert(self, docid: DocId) -> None:
        node = self.root
        for comp in docid.components:
            node = node.children.setdefault(comp, TrieNode())
        if node.terminal:
            raise DocIdError(f"docid {docid.surface!r} already in trie")
        node.terminal = True
        node.docid = docid
        self._size += 1

    def find(self, prefix: Sequence[str]) -> TrieNode | None:
        node = self.root
        for comp in prefix:
            node = node.children.get(comp)
            if node is None:
                return None
        return node

    def paths(self) -> Iterator[tuple[str, ...]]:
        """Every root-to-terminal component path, depth-first in insertion order."""
        stack: list[tuple[TrieNode, tuple[str, ...]]] = [(self.root, ())]
        while stack:
            node, path = stack.pop()
            if node.terminal:
                yield path
            for comp, child in reversed(list(node.children.items())):
                stack.append((child, path + (comp,)))


class DocIdRegistry:
    """Bidirectional raw_id <-> DocId map plus the trie used for decoding."""

    def __init__(self):
        self._by_raw: dict[str, DocId] = {}
        self._by_surface: dict[str, str] = {}
        self.trie = DocIdTrie()

    def __len__(self) -> int:
        return len(self._by_raw)

    def __contains__(self, surface: str) -> bool:
        return surface in self._by_surface

    def add(self, raw_id: str, docid: DocId) -> None:
        if raw_id in self._by_raw:
            raise DuplicateIdError(f"raw id {raw_id!r} already registered")
        if docid.surface in self._by_surface:
            raise DocIdError(f"docid {docid.surface!r} already registered")
        self._by_raw[raw_id] = docid
        self._by_surface[docid.surface] = raw_id
        self.trie.insert(docid)

    def docid(self, raw_id: str) -> DocId:
        return self._by_raw[raw_id]

    def raw_id(self, surface: str) -> str:
        return self._by_surface[surface]

    @property
    def surfaces(self) -> set[str]:
        return set(self._by_surface)

    def items(self):
        return self._by_raw.items()

    def to_json(self) -> dict[str, str]:
        """Export as ``{surface: raw_id}`` in registration order."""
        return dict(self._by_surface)

    @classmethod
    def from_json(cls, mapping: dict[str, str]) -> "DocIdRegistry":
        reg = cls()
        for surface, raw_id in mapping.items():
            reg.add(raw_id, DocId.parse(surface))
        return reg


def build_registry(docs: Sequence[Document], k: int = 3,
                   extractor: KeywordExtractor | None = None) -> DocIdRegistry:
    if not docs:
        raise ValueError("cannot build a registry from an empty corpus")
    if extractor is None:
        extractor = KeywordExtractor().fit(d.text for d in docs)
    registry = DocIdRegistry()
    taken: set[str] = set()
    for doc in docs:
        docid = build_docid(doc, extractor.extract(doc.text, k), taken)
        taken.add(docid.surface)
        registry.add(doc.raw_id, docid)
    return registry

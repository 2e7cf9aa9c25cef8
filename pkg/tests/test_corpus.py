import json
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import make_doc, random_registry, random_table
from reasongr.corpus import (
    STOPWORDS,
    CorpusParseError,
    CorpusSchemaError,
    DocId,
    DocIdError,
    DocIdRegistry,
    DuplicateIdError,
    KeywordExtractor,
    build_docid,
    build_registry,
    document_from_record,
    document_to_record,
    flatten_table,
    ingest_corpus,
    normalize_component,
    parse_corpus,
    parse_raw_id,
    tokenize,
)


def record(raw_id="ADI/2009/page_49.pdf-1", **kw):
    rec = {"id": raw_id, "pre_text": ["revenue grew ."], "post_text": [], "table": [["", "2009"], ["sales", "$5"]]}
    rec.update(kw)
    return rec


class TestTokenize:
    def test_lowercases_and_strips_punctuation(self):
        assert tokenize("Net Income, (loss) rose 5%!") == ["net", "income", "loss", "rose", "5"]

    def test_hyphens_split_words(self):
        assert tokenize("adi-2009-hedge") == ["adi", "2009", "hedge"]
        assert tokenize("long–term") == ["long", "term"]

    def test_pure_punctuation_dropped(self):
        assert tokenize("-- ... | ;") == []


class TestIngest:
    def test_round_trip_record(self):
        doc = document_from_record(record(qa={"question": "what was sales ?"}))
        assert doc.company == "ADI" and doc.year == "2009"
        assert document_from_record(document_to_record(doc)) == doc

    def test_parse_and_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps([record(), record("AAPL/2015/page_3.pdf-2")]))
        docs = ingest_corpus(path)
        assert [d.raw_id for d in docs] == ["ADI/2009/page_49.pdf-1", "AAPL/2015/page_3.pdf-2"]

    def test_malformed_json_reports_byte_offset(self):
        data = '[{"id": "é", x}]'.encode("utf-8")
        with pytest.raises(CorpusParseError) as info:
            parse_corpus(data)
        # "é" is two bytes, so the byte offset exceeds the character offset by one.
        assert info.value.offset == data.index(b"x")

    def test_invalid_utf8(self):
        with pytest.raises(CorpusParseError):
            parse_corpus(b'[{"id": "\xff"}]')

    def test_missing_key(self):
        rec = record()
        del rec["table"]
        with pytest.raises(CorpusSchemaError) as info:
            parse_corpus(json.dumps([record(), rec]))
        assert info.value.key == "table" and info.value.index == 1

    def test_duplicate_id(self):
        with pytest.raises(DuplicateIdError):
            parse_corpus(json.dumps([record(), record()]))

    def test_non_array(self):
        with pytest.raises(CorpusParseError):
            parse_corpus("{}")

    def test_ragged_table_rejected(self):
        with pytest.raises(ValueError):
            document_from_record(record(table=[["a", "b"], ["c"]]))

    def test_raw_id_fallback(self, caplog):
        assert parse_raw_id("weird-name.pdf") == ("unk", "0000")
        assert "non-conforming" in caplog.text
        assert parse_raw_id("JPM/2012/page_1.pdf") == ("JPM", "2012")


class TestFlatten:
    def test_example(self):
        doc = make_doc(table=[["", "2019", "2018"], ["revenue", "100", "90"]])
        assert [s.text for s in flatten_table(doc)] == ["revenue | 2019 | 100", "revenue | 2018 | 90"]

    def test_degenerate_tables(self):
        assert flatten_table(make_doc(table=[["h"]])) == []
        assert flatten_table(make_doc(table=[["a", "b"]])) == []
        assert flatten_table(make_doc()) == []

    def test_three_by_three(self):
        table = [["", "x", "y"], ["r1", "1", "2"], ["r2", "3", "4"]]
        segs = flatten_table(make_doc(table=table))
        assert len(segs) == 4
        assert segs[1].text == "r1 | y | 2" and segs[2].text == "r2 | x | 3"
        assert all(s.parent_raw_id == "ADI/2009/page_49.pdf-1" for s in segs)

    def test_pipe_in_cell_sanitized(self):
        segs = flatten_table(make_doc(table=[["", "a|b"], ["r", "1"]]))
        assert segs[0].text.count("|") == 2

    @given(st.integers(0, 2**32 - 1))
    def test_count_law(self, seed):
        table = random_table(np.random.default_rng(seed))
        assert len(flatten_table(make_doc(table=table))) == (len(table) - 1) * (len(table[0]) - 1)


def brute_tfidf(texts, text, k):
    docs = [[t for t in tokenize(x) if t not in STOPWORDS] for x in texts]
    n = len(docs)
    terms = [t for t in tokenize(text) if t not in STOPWORDS]
    tf = Counter(terms)
    scores = {}
    for t in tf:
        df = sum(t in d for d in docs)
        scores[t] = tf[t] * (math.log((n + 1) / (df + 1)) + 1)
    order = sorted(tf, key=lambda t: (-scores[t], terms.index(t)))
    return order[:k]


class TestKeywords:
    def test_single_candidate(self):
        ex = KeywordExtractor().fit(["derivatives derivatives the"])
        assert ex.extract("the derivatives derivatives", 1) == ["derivatives"]

    def test_k_exceeds_vocabulary(self):
        ex = KeywordExtractor().fit(["hedge swap"])
        assert sorted(ex.extract("hedge swap of the", 5)) == ["hedge", "swap"]

    def test_empty_text(self):
        assert KeywordExtractor().fit(["a"]).extract("the of ...", 3) == []

    def test_k_must_be_positive(self):
        with pytest.raises(ValueError):
            KeywordExtractor().fit(["a"]).extract("x", 0)

    def test_mini_corpus_against_brute_force(self):
        texts = ["hedge currency swap hedge", "currency pension goodwill", "swap swap lease"]
        ex = KeywordExtractor().fit(texts)
        for text in texts:
            assert ex.extract(text, 2) == brute_tfidf(texts, text, 2)

    @given(st.lists(st.lists(st.sampled_from("ab cd ef gh ij kl the of".split()), min_size=1, max_size=12),
                    min_size=1, max_size=6), st.integers(1, 4))
    def test_matches_brute_force_and_is_deterministic(self, word_lists, k):
        texts = [" ".join(w) for w in word_lists]
        ex = KeywordExtractor().fit(texts)
        for text in texts:
            got = ex.extract(text, k)
            assert got == brute_tfidf(texts, text, k)
            assert got == KeywordExtractor().fit(texts).extract(text, k)


class TestDocId:
    def test_examples(self):
        doc = make_doc()
        assert build_docid(doc, ["hedge", "currency"]).surface == "adi-2009-hedge-currency"
        assert build_docid(doc, ["hedge", "currency"], {"adi-2009-hedge-currency"}).surface == \
            "adi-2009-hedge-currency-2"
        assert build_docid(doc, [], {"adi-2009", "adi-2009-2"}).surface == "adi-2009-3"
        assert build_docid(doc, []).surface == "adi-2009"

    def test_empty_company_is_error(self):
        with pytest.raises(DocIdError):
            build_docid(make_doc("!!!/2009/x"), ["a"])

    def test_invalid_components(self):
        for bad in ("", "a-b", "A", "a b"):
            with pytest.raises(DocIdError):
                DocId(("x", bad))

    def test_normalize_component(self):
        assert normalize_component("Long-Term Debt") == "longtermdebt"

    def test_parse_inverse(self):
        d = DocId(("adi", "2009", "hedge"))
        assert DocId.parse(d.surface) == d


class TestRegistry:
    def test_collisions_resolved_in_corpus_order(self):
        docs = [make_doc(f"ADI/2009/p{i}.pdf", pre=["hedge"]) for i in range(3)]
        reg = build_registry(docs, k=1)
        assert [reg.docid(d.raw_id).surface for d in docs] == \
            ["adi-2009-hedge", "adi-2009-hedge-2", "adi-2009-hedge-3"]

    def test_single_doc_trie(self):
        reg = build_registry([make_doc(pre=["pension plan"])], k=2)
        assert len(list(reg.trie.paths())) == 1

    def test_shared_prefix_branching(self):
        reg = DocIdRegistry()
        reg.add("x", DocId(("a", "b", "c")))
        reg.add("y", DocId(("a", "b", "d")))
        assert sorted(reg.trie.find(["a", "b"]).children) == ["c", "d"]
        assert reg.trie.find(["a", "z"]) is None

    def test_duplicates_rejected(self):
        reg = DocIdRegistry()
        reg.add("x", DocId(("a",)))
        with pytest.raises(DuplicateIdError):
            reg.add("x", DocId(("b",)))
        with pytest.raises(DocIdError):
            reg.add("y", DocId(("a",)))

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            build_registry([])

    def test_fifty_random_docs(self):
        rng = np.random.default_rng(0)
        docs = [make_doc(f"C{i % 7}/20{10 + i % 3}/p{i}.pdf", pre=[" ".join(rng.choice(list("abcde"), 4))])
                for i in range(50)]
        reg = build_registry(docs)
        assert len(reg) == 50 and len(reg.surfaces) == 50

    @given(st.integers(0, 2**32 - 1), st.integers(1, 60))
    def test_bijective_and_trie_exact(self, seed, n):
        reg = random_registry(np.random.default_rng(seed), n)
        for raw_id, docid in reg.items():
            assert reg.raw_id(docid.surface) == raw_id
            assert reg.docid(reg.raw_id(docid.surface)) == docid
        paths = sorted(reg.trie.paths())
        assert paths == sorted(d.components for _, d in reg.items())
        assert len(reg.trie) == n

    def test_json_round_trip(self):
        reg = random_registry(np.random.default_rng(3), 20)
        back = DocIdRegistry.from_json(json.loads(json.dumps(reg.to_json())))
        assert dict(back.items()) == dict(reg.items())

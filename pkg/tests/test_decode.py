import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import RandomScorer, random_registry, tiny_model
from reasongr.corpus import DocId, DocIdRegistry
from reasongr.decode import (
    ModelScorer, TokenTrie, batch_constrained_greedy, beam_search, constrained_beam, constrained_greedy,
    cot_decode, free_greedy, unconstrained_docid,
)
from reasongr.tokenizer import BOS, EOS, SEP, build_vocab


class Scripted:
    def __init__(self, vocab_size, prefs):
        self.v, self.prefs = vocab_size, prefs

    def __call__(self, prefix):
        logits = np.zeros(self.v)
        for tok, val in self.prefs.get(len(prefix), {}).items():
            logits[tok] = val
        return logits


def build(surfaces):
    reg = DocIdRegistry()
    for i, s in enumerate(surfaces):
        reg.add(f"r{i}", DocId.parse(s))
    vocab = build_vocab([], reg, ["find company year"])
    return reg, vocab, TokenTrie.from_registry(reg, vocab)


def test_allowed_sets():
    _, vocab, trie = build(["a-b", "a-b-c", "d"])
    a, b = vocab.id("a"), vocab.id("b")
    assert sorted(trie.root.children) == sorted([a, vocab.id("d")])
    node = trie.root.children[a].children[b]
    assert node.allowed.tolist() == sorted([EOS, vocab.id("c")])


def test_greedy_follows_scores():
    reg, vocab, trie = build(["a-b", "a-c", "d"])
    a, c = vocab.id("a"), vocab.id("c")
    scorer = Scripted(len(vocab), {1: {a: 5.0}, 2: {c: 3.0}})
    assert constrained_greedy(scorer, trie).surface == "a-c"


def test_single_option_skips_scorer():
    _, vocab, trie = build(["x-y-z"])
    scorer = RandomScorer(len(vocab), 0)
    assert constrained_greedy(scorer, trie).surface == "x-y-z"
    assert scorer.calls == 0


def test_max_len_forces_completion():
    _, vocab, trie = build(["a", "a-b-c-d"])
    a = vocab.id("a")
    scorer = Scripted(len(vocab), {1: {a: 9.0}, 2: {EOS: -9.0}})
    assert constrained_greedy(scorer, trie, max_len=4).surface == "a-b-c-d"
    assert constrained_greedy(scorer, trie, max_len=1).surface == "a"


@given(st.integers(0, 2**32 - 1), st.integers(1, 30), st.sampled_from([1, 2, 4]))
def test_beam_and_greedy_always_valid(seed, n, width):
    rng = np.random.default_rng(seed)
    reg = random_registry(rng, n)
    vocab = build_vocab([], reg)
    trie = TokenTrie.from_registry(reg, vocab)
    scorer = RandomScorer(len(vocab), seed)
    ranked = constrained_beam(scorer, trie, width, max_len=3)
    assert ranked and all(d.surface in reg for d in ranked)
    assert constrained_greedy(scorer, trie, max_len=3).surface in reg
    if width == 1:
        assert ranked[0] == constrained_greedy(scorer, trie, max_len=3)


def test_beam_ranking_is_length_normalized():
    reg, vocab, trie = build(["a", "b-c"])
    scorer = RandomScorer(len(vocab), 11)
    hyps = beam_search(scorer, trie, beam_width=4)
    scores = [h.score for h in hyps]
    assert scores == sorted(scores, reverse=True)
    assert all(h.tokens[-1] == EOS for h in hyps)
    with pytest.raises(ValueError):
        beam_search(scorer, trie, beam_width=0)


def test_wider_beam_finds_better_sequence():
    reg, vocab, trie = build(["a-x", "b-y"])
    a, b, x, y = (vocab.id(t) for t in "abxy")

    class Trap:
        def __call__(self, prefix):
            logits = np.full(len(vocab), -20.0)
            if len(prefix) == 1:
                logits[a], logits[b] = 1.0, 0.9
            elif len(prefix) == 2:
                # After "a" most mass goes to a token the trie forbids there.
                logits[x if prefix[1] == a else y] = 0.0
                logits[EOS] = 6.0 if prefix[1] == a else -20.0
            else:
                logits[EOS] = 5.0
            return logits

    assert constrained_greedy(Trap(), trie).surface == "a-x"
    assert constrained_beam(Trap(), trie, beam_width=2)[0].surface == "b-y"


def test_free_greedy_bans_specials():
    _, vocab, _ = build(["a"])
    scorer = Scripted(len(vocab), {1: {BOS: 9.0, vocab.id("a"): 1.0}, 2: {EOS: 9.0}})
    assert free_greedy(scorer, 5) == [vocab.id("a")]


def test_cot_decode_budget_forces_separator():
    _, vocab, trie = build(["a-b", "c"])
    find = vocab.id("find")
    scorer = Scripted(len(vocab), {n: {find: 5.0, vocab.id("c"): 2.0} for n in range(1, 10)})
    trace, docid = cot_decode(scorer, trie, vocab, free_budget=3)
    assert trace == "find find find" and docid.surface == "c"


def test_cot_decode_stops_at_separator():
    _, vocab, trie = build(["a-b", "c"])
    comp = vocab.id("company")
    scorer = Scripted(len(vocab), {1: {comp: 5.0}, 2: {SEP: 5.0}, 3: {vocab.id("a"): 1.0}})
    trace, docid = cot_decode(scorer, trie, vocab, free_budget=10)
    assert trace == "company" and docid.surface == "a-b"
    assert cot_decode(scorer, trie, vocab, free_budget=0)[0] == ""


def test_batch_greedy_matches_per_prompt():
    rng = np.random.default_rng(3)
    reg = random_registry(rng, 15, alphabet=4)
    vocab = build_vocab([], reg)
    model, ads = tiny_model(rng, vocab=len(vocab), d=8)
    trie = TokenTrie.from_registry(reg, vocab)
    prompts = [rng.integers(5, len(vocab), size=int(rng.integers(1, 8))).tolist() for _ in range(6)]
    batch = batch_constrained_greedy(model, ads, prompts, trie, max_len=4)
    solo = [constrained_greedy(ModelScorer(model, ads, p), trie, max_len=4) for p in prompts]
    assert batch == solo
    assert batch_constrained_greedy(model, ads, [], trie) == []


def test_unconstrained_docid_joins_with_hyphens():
    _, vocab, _ = build(["a-b"])
    scorer = Scripted(len(vocab), {1: {vocab.id("a"): 5.0}, 2: {vocab.id("b"): 5.0}, 3: {EOS: 5.0}})
    assert unconstrained_docid(scorer, vocab) == "a-b"


def test_missing_component_in_vocab():
    reg = DocIdRegistry()
    reg.add("r", DocId(("q",)))
    vocab = build_vocab([], DocIdRegistry.from_json({"z": "x"}))
    with pytest.raises(ValueError):
        TokenTrie.from_registry(reg, vocab)

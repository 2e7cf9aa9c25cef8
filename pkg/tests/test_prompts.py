from collections import Counter

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reasongr import prompts
from reasongr.corpus import DocId
from reasongr.prompts import Mode, PromptError, compose_prompt, format_target, parse_target

SHOTS = [("what was revenue of abc in 2010 ?", "abc-2010-revenue"), ("q two", "xyz-2011-lease")]


def test_enumeration():
    combos = prompts.enumerate_combinations()
    assert len(combos) == 25 and len(set(combos)) == 25
    assert combos[0] == (0, 0) and combos == sorted(combos)


def test_forced_template_and_cot():
    rng = np.random.default_rng(0)
    s = compose_prompt(rng, "q", "plain", template_id=0)
    assert s.input_text.startswith("Answer the query with a document ID.")
    assert s.cot_id is None
    s = compose_prompt(rng, "q", "cot", cot_id=3)
    assert "Let's think step-by-step." in s.input_text


def test_layout_cot_fewshot():
    s = compose_prompt(np.random.default_rng(1), "how much debt ?", Mode.FEWSHOT_COT, SHOTS,
                       template_id=2, cot_id=1)
    assert s.input_text == (
        "Based on the question, predict the document ID. You need to explain your answer.\n"
        "Query: what was revenue of abc in 2010 ? Document ID: abc-2010-revenue\n"
        "Query: q two Document ID: xyz-2011-lease\n"
        "Query: how much debt ? Document ID:"
    )


def test_plain_layout():
    s = compose_prompt(np.random.default_rng(1), "q", "plain", template_id=4)
    assert s.input_text == "Using the question, find the document ID.\nQuery: q Document ID:"


def test_fewshot_needs_examples():
    with pytest.raises(PromptError):
        compose_prompt(np.random.default_rng(0), "q", "fewshot", [])


def test_unknown_mode():
    with pytest.raises(ValueError):
        compose_prompt(np.random.default_rng(0), "q", "zero")


def test_deterministic_and_one_draw_per_call():
    a = [compose_prompt(np.random.default_rng(7), "q", "cot") for _ in range(2)]
    assert a[0] == a[1]
    r1, r2 = np.random.default_rng(5), np.random.default_rng(5)
    compose_prompt(r1, "q", "plain", template_id=1)
    compose_prompt(r2, "q", "cot")
    assert r1.integers(1 << 30) == r2.integers(1 << 30)


def test_uniform_grid():
    rng = np.random.default_rng(2024)
    counts = Counter()
    for _ in range(10_000):
        s = compose_prompt(rng, "q", "cot")
        counts[(s.template_id, s.cot_id)] += 1
    assert len(counts) == 25
    assert all(320 <= c <= 480 for c in counts.values())


def test_format_target_examples():
    d = DocId(("adi", "2009", "hedge"))
    assert format_target(d, mode="plain") == "adi-2009-hedge"
    assert format_target(d, ["find hedging section", "year is 2009"], "cot") == \
        "find hedging section; year is 2009 => adi-2009-hedge"
    with pytest.raises(PromptError):
        format_target(d, [], "cot")


@given(st.lists(st.text(min_size=1, max_size=20).filter(lambda s: s.strip()), min_size=1, max_size=4),
       st.lists(st.from_regex(r"[a-z0-9]{1,6}", fullmatch=True), min_size=1, max_size=5))
def test_parse_back(trace, comps):
    surface = DocId(tuple(comps)).surface
    assert parse_target(format_target(surface, trace, "fewshot_cot"))[1] == surface


def test_synthesized_trace():
    trace = prompts.synthesize_trace("What was the hedging cost of ADI in 2009?", DocId(("adi", "2009", "x")))
    assert trace == ["find hedging cost", "company adi, year 2009"]


@pytest.mark.parametrize("mode", list(Mode))
def test_query_verbatim_in_input(mode):
    s = compose_prompt(np.random.default_rng(3), "Revenue, ADI 2009?", mode, SHOTS)
    assert "Revenue, ADI 2009?" in s.input_text
    assert (s.cot_id is not None) == mode.is_cot

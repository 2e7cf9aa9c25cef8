"""Seeded synthetic FinQA-style corpora for desk-scale experiments.

Run ``python -m reasongr.synthetic --docs 50 --seed 0 --out corpus.json``.
"""

from __future__ import annotations

import argparse
import json
import string
import sys

import numpy as np

from .corpus import Document, document_from_record

TOPICS = (
    "hedging", "derivatives", "pension", "goodwill", "leases", "restructuring",
    "inventory", "dividends", "taxation", "acquisition", "litigation", "warranty",
    "impairment", "repurchase", "securitization", "amortization", "receivables",
    "refinancing", "divestiture", "insurance",
)
METRICS = (
    "revenue", "net income", "operating expenses", "interest expense", "capital expenditures",
    "cash flow", "gross margin", "depreciation", "long-term debt", "deferred taxes",
)
SENTENCES = (
    "the {topic} program of {company} expanded during {year} across {region} operations .",
    "management reviewed {topic} exposure related to the {product} line in {year} .",
    "{company} disclosed {topic} commitments tied to {product} contracts .",
    "results in {region} reflected {topic} adjustments and {product} demand .",
    "the board approved {topic} measures affecting {metric} for fiscal {year} .",
)
POST_SENTENCES = (
    "see note {note} for further discussion of {topic} and {product} .",
    "the {product} segment remains subject to {topic} review .",
)
REGIONS = ("europe", "asia", "latin america", "north america", "africa", "oceania")


def _pseudoword(rng: np.random.Generator) -> str:
    consonants, vowels = "bcdfgklmnprstvz", "aeiou"
    return "".join(rng.choice(list(consonants)) + rng.choice(list(vowels)) for _ in range(3))


def _ticker(rng: np.random.Generator, taken: set[str]) -> str:
    while True:
        t = "".join(rng.choice(list(string.ascii_uppercase), size=int(rng.integers(3, 5))))
        if t not in taken:
            taken.add(t)
            return t


def synthetic_records(n_docs: int = 50, seed: int = 0, docs_per_company: int = 2) -> list[dict]:
    rng = np.random.default_rng(seed)
    n_companies = -(-n_docs // docs_per_company)
    tickers: set[str] = set()
    records = []
    for _ in range(n_companies):
        company = _ticker(rng, tickers)
        years = rng.choice(np.arange(2004, 2020), size=docs_per_company, replace=False)
        for year in sorted(int(y) for y in years):
            if len(records) == n_docs:
                break
            topic = str(rng.choice(TOPICS))
            product = _pseudoword(rng)
            fill = dict(company=company.lower(), year=year, topic=topic, product=product,
                        region=str(rng.choice(REGIONS)), metric=str(rng.choice(METRICS)),
                        note=int(rng.integers(2, 20)))
            pre = [s.format(**fill) for s in rng.choice(SENTENCES, size=3, replace=False)]
            post = [str(rng.choice(POST_SENTENCES)).format(**fill)]
            metrics = rng.choice(METRICS, size=3, replace=False)
            table = [["", str(year), str(year - 1)]]
            for m in metrics:
                table.append([str(m)] + [f"${int(rng.integers(100, 9999)):,}" for _ in range(2)])
            question = f"what was the {metrics[0]} of {company.lower()} in {year} ?"
            records.append({
                "id": f"{company}/{year}/page_{int(rng.integers(10, 99))}.pdf-{int(rng.integers(1, 5))}",
                "pre_text": pre,
                "post_text": post,
                "table": table,
                "qa": {"question": question},
            })
    return records


def synthetic_corpus(n_docs: int = 50, seed: int = 0) -> list[Document]:
    return [document_from_record(r, i) for i, r in enumerate(synthetic_records(n_docs, seed))]


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Write a synthetic FinQA-style corpus.")
    parser.add_argument("--docs", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default="-")
    args = parser.parse_args(argv)
    text = json.dumps(synthetic_records(args.docs, args.seed), indent=1)
    if args.out == "-":
        sys.stdout.write(text + "\n")
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())

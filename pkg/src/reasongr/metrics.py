"""Exact, partial, set and structure match over docid token sequences.

All four scores live in [0, 1] and compare docid *components*, not
characters. ``gold`` must be nonempty; an empty prediction scores 0 on
every metric.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Hashable, Iterable, Sequence

CSV_HEADER = ("Model", "Split", "EM", "PM", "SM", "S")


def _check_gold(gold: Sequence) -> None:
    if len(gold) == 0:
        raise ValueError("gold sequence must be nonempty")


def em(pred: Sequence[Hashable], gold: Sequence[Hashable]) -> int:
    _check_gold(gold)
    return int(list(pred) == list(gold))


def pm(pred: Sequence[Hashable], gold: Sequence[Hashable]) -> float:
    """Positionwise matches divided by the longer length."""
    _check_gold(gold)
    hits = sum(1 for p, g in zip(pred, gold) if p == g)
    return hits / max(len(pred), len(gold))


def sm(pred: Sequence[Hashable], gold: Sequence[Hashable]) -> float:
    """Jaccard overlap of the token sets."""
    _check_gold(gold)
    if len(pred) == 0:
        return 0.0
    p, g = set(pred), set(gold)
    return len(p & g) / len(p | g)


def s_score(pred: Sequence[Hashable], gold: Sequence[Hashable]) -> float:
    _check_gold(gold)
    longest = max(len(pred), len(gold))
    return 1.0 - abs(len(pred) - len(gold)) / longest


def score_all(pred: Sequence[Hashable], gold: Sequence[Hashable]) -> tuple[int, float, float, float]:
    return em(pred, gold), pm(pred, gold), sm(pred, gold), s_score(pred, gold)


@dataclass
class QueryRecord:
    query_id: str
    pred: str
    gold: str
    em: float
    pm: float
    sm: float
    s_score: float

    @classmethod
    def from_surfaces(cls, query_id: str, pred: str, gold: str) -> "QueryRecord":
        pred_toks = pred.split("-") if pred else []
        e, p, s, st = score_all(pred_toks, gold.split("-"))
        return cls(query_id, pred, gold, e, p, s, st)


@dataclass
class MetricsReport:
    em: float
    pm: float
    sm: float
    s_score: float
    n: int
    records: list[QueryRecord] = field(default_factory=list)

    def as_row(self, model: str, split: str) -> list[str]:
        return [model, split] + [f"{v:.4f}" for v in (self.em, self.pm, self.sm, self.s_score)]

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self, model: str, split: str) -> str:
        return reports_to_csv([(model, split, self)])


def reports_to_csv(rows: Iterable[tuple[str, str, MetricsReport]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for model, split, report in rows:
        writer.writerow(report.as_row(model, split))
    return buf.getvalue()


def aggregate(records: Sequence[QueryRecord]) -> MetricsReport:
    if not records:
        raise ValueError("cannot aggregate an empty record set")
    n = len(records)
    return MetricsReport(
        em=sum(r.em for r in records) / n,
        pm=sum(r.pm for r in records) / n,
        sm=sum(r.sm for r in records) / n,
        s_score=sum(r.s_score for r in records) / n,
        n=n,
        records=list(records),
    )

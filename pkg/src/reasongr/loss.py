"""Cross-entropy and the metric-driven penalty that scales it."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import metrics
from .tokenizer import EOS, SEP


@dataclass(frozen=True)
class PenaltyWeights:
    w_em: float = 0.5
    w_pm: float = 0.5
    w_sm: float = 0.5
    w_s: float = 0.5

    def __post_init__(self):
        if min(self.w_em, self.w_pm, self.w_sm, self.w_s) < 0:
            raise ValueError("penalty weights must be nonnegative")

    @classmethod
    def zero(cls) -> "PenaltyWeights":
        return cls(0.0, 0.0, 0.0, 0.0)

    @classmethod
    def parse(cls, text: str) -> "PenaltyWeights":
        """Parse ``"w_em,w_pm,w_sm,w_s"``."""
        parts = [float(p) for p in text.split(",")]
        if len(parts) != 4:
            raise ValueError("expected four comma-separated penalty weights")
        return cls(*parts)

    @property
    def total(self) -> float:
        return self.w_em + self.w_pm + self.w_sm + self.w_s

    @property
    def is_zero(self) -> bool:
        return self.total == 0.0


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, target: Sequence[int]) -> float:
    """Mean negative log-likelihood of ``target`` under row-wise softmax."""
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != len(target):
        raise ValueError(f"logits rows {logits.shape[0]} != target length {len(target)}")
    lp = log_softmax(logits)
    return float(-lp[np.arange(len(target)), target].mean())


def cross_entropy_grad(logits: np.ndarray, target: Sequence[int]) -> np.ndarray:
    """d cross_entropy / d logits."""
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.int64)
    g = softmax(logits)
    g[np.arange(len(target)), target] -= 1.0
    return g / len(target)


def docid_span(tokens: Sequence[int]) -> list[int]:
    """Tokens after the last separator and before the first EOS."""
    toks = list(tokens)
    if EOS in toks:
        toks = toks[: toks.index(EOS)]
    if SEP in toks:
        toks = toks[len(toks) - toks[::-1].index(SEP):]
    return toks


def penalty_factor(pred: Sequence, target: Sequence, w: PenaltyWeights) -> float:
    """``1 + sum_m w_m * (1 - m(pred, target))`` over EM, PM, SM and S-Score."""
    if w.is_zero:
        return 1.0
    e, p, s, st = metrics.score_all(pred, target)
    # Summing the terms before adding 1 keeps P <= 1 + w.total exactly under rounding.
    return 1.0 + (w.w_em * (1 - e) + w.w_pm * (1 - p) + w.w_sm * (1 - s) + w.w_s * (1 - st))


def sequence_penalty(logits: np.ndarray, target: Sequence[int], w: PenaltyWeights) -> float:
    """Penalty for the teacher-forced greedy prediction against ``target``.

    Both sequences are reduced to their docid span so that reasoning text
    in CoT targets does not count.
    """
    if w.is_zero:
        return 1.0
    pred = np.asarray(logits).argmax(axis=-1).tolist()
    gold = docid_span(target) or list(target)
    return penalty_factor(docid_span(pred), gold, w)


def penalized_loss(logits: np.ndarray, target: Sequence[int], w: PenaltyWeights) -> tuple[float, float]:
    """Return (CE * P, P); P carries no gradient."""
    ce = cross_entropy(logits, target)
    p = sequence_penalty(logits, target, w)
    return ce * p, p


def penalized_loss_grad(logits: np.ndarray, target: Sequence[int], w: PenaltyWeights) -> np.ndarray:
    return sequence_penalty(logits, target, w) * cross_entropy_grad(logits, target)

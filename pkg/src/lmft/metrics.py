"""Evaluation measures: positive-class F1, macro mean F1, and nDCG@k.

All functions are pure and order-insensitive over examples. Degenerate
cases are pinned down rather than left to chance: an F1 with a zero
precision-plus-recall denominator is 0, and an example with no gold
labels scores 0 in nDCG while still counting toward the mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import UsageError


def _check_binary(preds, gold) -> tuple[list[int], list[int]]:
    p = [int(x) for x in preds]
    g = [int(x) for x in gold]
    if len(p) != len(g):
        raise UsageError(f"length mismatch: {len(p)} predictions, {len(g)} gold")
    for name, vals in (("predictions", p), ("gold", g)):
        if any(v not in (0, 1) for v in vals):
            raise UsageError(f"{name} must be 0/1 valued")
    return p, g


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    fn: int
    tn: int

    @classmethod
    def from_binary(cls, preds, gold, positive_class: int) -> "ConfusionCounts":
        p, g = _check_binary(preds, gold)
        if positive_class not in (0, 1):
            raise UsageError(f"positive_class must be 0 or 1, got {positive_class}")
        tp = fp = fn = tn = 0
        for pi, gi in zip(p, g):
            hit_p = pi == positive_class
            hit_g = gi == positive_class
            if hit_p and hit_g:
                tp += 1
            elif hit_p:
                fp += 1
            elif hit_g:
                fn += 1
            else:
                tn += 1
        return cls(tp=tp, fp=fp, fn=fn, tn=tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        if denom == 0:
            return 0.0
        return 2 * self.tp / denom


def binary_f1(preds, gold, positive_class: int = 1) -> float:
    """F1 of the designated class; 0 when precision and recall are both 0."""
    return ConfusionCounts.from_binary(preds, gold, positive_class).f1()


def mean_f1(preds, gold) -> float:
    """Unweighted mean of the per-class F1 values over both classes."""
    a = binary_f1(preds, gold, positive_class=0)
    b = binary_f1(preds, gold, positive_class=1)
    return (a + b) / 2.0


def ndcg_at_k(score_lists, gold_label_sets, k: int = 5) -> float:
    """Mean normalized discounted cumulative gain at rank ``k``.

    Per example, labels are ranked by descending score with ascending
    label id breaking ties; relevance is binary membership in the gold
    set. Only the ranking of the scores matters.
    """
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    scores = list(score_lists)
    golds = [set(g) for g in gold_label_sets]
    if len(scores) != len(golds):
        raise UsageError(f"length mismatch: {len(scores)} score lists, "
                         f"{len(golds)} gold sets")
    if not scores:
        raise UsageError("need at least one example")
    total = 0.0
    for s, gold in zip(scores, golds):
        vals = [float(x) for x in s]
        if any(l < 0 or l >= len(vals) for l in gold):
            raise UsageError(f"gold label outside the scored vocabulary "
                             f"of {len(vals)} labels")
        if not gold:
            continue  # counts as 0
        ranking = sorted(range(len(vals)), key=lambda i: (-vals[i], i))
        dcg = sum(1.0 / math.log2(rank + 1)
                  for rank, label in enumerate(ranking[:k], start=1)
                  if label in gold)
        idcg = sum(1.0 / math.log2(rank + 1)
                   for rank in range(1, min(k, len(gold)) + 1))
        total += dcg / idcg
    return total / len(scores)

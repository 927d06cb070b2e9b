"""Metric oracles: direct recounting and exhaustive ranking checks."""

import itertools
import math
import random

import pytest

from lmft.errors import UsageError
from lmft.metrics import ConfusionCounts, binary_f1, mean_f1, ndcg_at_k


def test_f1_matches_recounted_confusions():
    rng = random.Random(123)
    for _ in range(1000):
        n = rng.randint(1, 40)
        preds = [rng.randint(0, 1) for _ in range(n)]
        gold = [rng.randint(0, 1) for _ in range(n)]
        for pos in (0, 1):
            tp = sum(1 for p, g in zip(preds, gold) if p == pos and g == pos)
            fp = sum(1 for p, g in zip(preds, gold) if p == pos and g != pos)
            fn = sum(1 for p, g in zip(preds, gold) if p != pos and g == pos)
            denom = 2 * tp + fp + fn
            want = 0.0 if denom == 0 else 2 * tp / denom
            assert binary_f1(preds, gold, positive_class=pos) == want
        assert mean_f1(preds, gold) == \
            (binary_f1(preds, gold, 0) + binary_f1(preds, gold, 1)) / 2.0


def test_confusion_counts_partition():
    preds = [1, 1, 0, 0, 1]
    gold = [1, 0, 0, 1, 1]
    c = ConfusionCounts.from_binary(preds, gold, positive_class=1)
    assert (c.tp, c.fp, c.fn, c.tn) == (2, 1, 1, 1)
    assert c.total == 5
    flipped = ConfusionCounts.from_binary(preds, gold, positive_class=0)
    assert (flipped.tp, flipped.fp, flipped.fn, flipped.tn) == \
        (c.tn, c.fn, c.fp, c.tp)


def test_f1_degenerate_cases():
    assert binary_f1([0, 0], [0, 0], positive_class=1) == 0.0
    assert binary_f1([1, 1], [1, 1], positive_class=1) == 1.0
    assert mean_f1([0, 0], [0, 0]) == 0.5  # class 0 perfect, class 1 empty


def test_binary_validation():
    with pytest.raises(UsageError):
        binary_f1([0, 1], [0])
    with pytest.raises(UsageError):
        binary_f1([0, 2], [0, 1])
    with pytest.raises(UsageError):
        ConfusionCounts.from_binary([0], [0], positive_class=2)


# -- ndcg ------------------------------------------------------------------

def exhaustive_ndcg(scores, gold, k):
    """Definitional recomputation: try every permutation consistent with
    the tie-break and take the one the sort contract picks."""
    n = len(scores)
    best = None
    for perm in itertools.permutations(range(n)):
        keys = [(-scores[i], i) for i in perm]
        if keys != sorted(keys):
            continue
        dcg = sum(1.0 / math.log2(r + 1)
                  for r, label in enumerate(perm[:k], start=1)
                  if label in gold)
        best = dcg
        break
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, min(k, len(gold)) + 1))
    return best / idcg


def test_ndcg_matches_exhaustive_recomputation():
    rng = random.Random(31)
    for _ in range(300):
        n = rng.randint(1, 8)
        scores = [round(rng.random(), 2) for _ in range(n)]  # force some ties
        gold = {i for i in range(n) if rng.random() < 0.4}
        if not gold:
            gold = {rng.randrange(n)}
        k = rng.randint(1, 6)
        want = exhaustive_ndcg(scores, gold, k)
        got = ndcg_at_k([scores], [gold], k=k)
        assert got == pytest.approx(want, abs=1e-12)


def test_ndcg_ideal_ranking_is_exactly_one():
    # gold labels hold the top scores; every prefix is ideal
    scores = [0.9, 0.8, 0.1, 0.05]
    assert ndcg_at_k([scores], [{0, 1}], k=5) == 1.0
    assert ndcg_at_k([scores], [{0}], k=1) == 1.0


def test_ndcg_rank_two_of_single_gold():
    # one gold label placed second: dcg = 1/log2(3), idcg = 1/log2(2)
    scores = [0.9, 0.8, 0.1]
    want = math.log2(2.0) / math.log2(3.0)
    assert ndcg_at_k([scores], [{1}], k=5) == pytest.approx(want, abs=1e-12)


def test_ndcg_empty_gold_counts_as_zero():
    scores = [[0.9, 0.1], [0.9, 0.1]]
    golds = [{0}, set()]
    assert ndcg_at_k(scores, golds, k=5) == pytest.approx(0.5)


def test_ndcg_mean_over_examples():
    one = ndcg_at_k([[0.9, 0.8, 0.1]], [{1}], k=5)
    two = ndcg_at_k([[0.9, 0.8, 0.1]], [{0}], k=5)
    both = ndcg_at_k([[0.9, 0.8, 0.1]] * 2, [{1}, {0}], k=5)
    assert both == pytest.approx((one + two) / 2.0, abs=1e-15)


def test_ndcg_validation():
    with pytest.raises(UsageError):
        ndcg_at_k([[0.5]], [{0}], k=0)
    with pytest.raises(UsageError):
        ndcg_at_k([[0.5]], [{0}, {0}])
    with pytest.raises(UsageError):
        ndcg_at_k([], [])
    with pytest.raises(UsageError):
        ndcg_at_k([[0.5, 0.5]], [{7}])

"""Ranking metrics: recall@k, NDCG@k (binary gains), and MRR."""

from __future__ import annotations

import numpy as np

__all__ = ["ranking_from_scores", "recall_at_k", "ndcg_at_k", "mrr"]


def ranking_from_scores(scores) -> list[int]:
    """Document indices best-first; ties keep the lower index (stable argsort)."""
    scores = np.asarray(scores, dtype=np.float64)
    return [int(i) for i in np.argsort(-scores, kind="stable")]


def _check(ranking, gold) -> tuple[list[int], set[int]]:
    ranking = [int(i) for i in ranking]
    if sorted(ranking) != list(range(len(ranking))):
        raise ValueError("ranking must be a permutation of document indices")
    gold = set(int(i) for i in gold)
    if not gold:
        raise ValueError("gold set must be nonempty")
    return ranking, gold


def recall_at_k(ranking, gold, k: int) -> float:
    ranking, gold = _check(ranking, gold)
    return len(set(ranking[:k]) & gold) / len(gold)


def ndcg_at_k(ranking, gold, k: int) -> float:
    ranking, gold = _check(ranking, gold)
    dcg = sum(1.0 / np.log2(j + 2) for j, doc in enumerate(ranking[:k]) if doc in gold)
    ideal = sum(1.0 / np.log2(j + 2) for j in range(min(k, len(gold))))
    return dcg / ideal


def mrr(ranking, gold) -> float:
    ranking, gold = _check(ranking, gold)
    for j, doc in enumerate(ranking):
        if doc in gold:
            return 1.0 / (j + 1)
    return 0.0

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gumbel_rerank.metrics import mrr, ndcg_at_k, ranking_from_scores, recall_at_k


class TestHandValues:
    def test_perfect_single_gold(self):
        for k in (1, 2, 3):
            assert recall_at_k([0, 1, 2], {0}, k) == 1.0
            assert ndcg_at_k([0, 1, 2], {0}, k) == 1.0
        assert mrr([0, 1, 2], {0}) == 1.0

    def test_partial_recall(self):
        assert recall_at_k([3, 2, 1, 0], {1, 3}, 2) == 0.5

    def test_late_gold(self):
        assert mrr([0, 1, 2], {2}) == pytest.approx(1 / 3)
        assert ndcg_at_k([0, 1, 2], {2}, 3) == pytest.approx(1 / np.log2(4))

    def test_ndcg_two_gold_split(self):
        # gold at ranks 1 and 3 of 4; ideal puts them at ranks 1 and 2
        got = ndcg_at_k([1, 0, 3, 2], {1, 3}, 4)
        dcg = 1.0 + 1.0 / np.log2(4)
        idcg = 1.0 + 1.0 / np.log2(3)
        assert got == pytest.approx(dcg / idcg)


class TestRankingFromScores:
    def test_best_first(self):
        assert ranking_from_scores([0.1, 0.9, 0.5]) == [1, 2, 0]

    def test_tie_prefers_lower_index(self):
        assert ranking_from_scores([1.0, 2.0, 2.0]) == [1, 2, 0]

    def test_shift_invariant(self):
        scores = np.random.default_rng(0).normal(size=10)
        assert ranking_from_scores(scores) == ranking_from_scores(scores + 42.0)


class TestErrors:
    def test_empty_gold(self):
        for fn in (lambda: recall_at_k([0, 1], set(), 1),
                   lambda: ndcg_at_k([0, 1], set(), 1),
                   lambda: mrr([0, 1], set())):
            with pytest.raises(ValueError):
                fn()

    def test_non_permutation(self):
        with pytest.raises(ValueError):
            recall_at_k([0, 0, 1], {0}, 1)
        with pytest.raises(ValueError):
            mrr([1, 2], {1})


@settings(max_examples=80, deadline=None)
@given(st.integers(min_value=1, max_value=10), st.data())
def test_metric_bounds_property(n, data):
    perm = data.draw(st.permutations(list(range(n))))
    gold = data.draw(st.sets(st.integers(min_value=0, max_value=n - 1), min_size=1))
    k = data.draw(st.integers(min_value=1, max_value=n))
    r, nd, m = recall_at_k(perm, gold, k), ndcg_at_k(perm, gold, k), mrr(perm, gold)
    assert 0.0 <= r <= 1.0 and 0.0 <= nd <= 1.0 and 0.0 < m <= 1.0
    assert recall_at_k(perm, gold, n) == 1.0
    if r == 1.0 and k >= len(gold):
        assert nd <= 1.0

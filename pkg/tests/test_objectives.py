import numpy as np
import pytest

from gumbel_rerank import autodiff as ad
from gumbel_rerank.attention import DocMask
from gumbel_rerank.autodiff import Tensor
from gumbel_rerank.datagen import Vocabulary, gen_multihop, gen_single_hop
from gumbel_rerank.objectives import (
    DocLikelihoods,
    adist_loss,
    adist_stats,
    adist_target,
    compute_doc_likelihoods,
    emdr_loss,
    grerank_loss,
    loop_loss,
    pdist_loss,
    reranker_distribution,
)
from gumbel_rerank.reader import ReaderConfig, ReaderParams, language_loss, prefill
from gumbel_rerank.sampling import GumbelParams
from gumbel_rerank.scorer import MlpScorer, ScorerConfig

from util import finite_difference_check


def reader_params(seed=4, vocab=64, dim=8):
    params = ReaderParams(ReaderConfig(vocab_size=vocab, embed_dim=dim, max_doc_len=8,
                                       max_answer_len=2, seed=seed))
    params.w_out.data[...] = np.random.default_rng(seed + 1).normal(0, 0.3, params.w_out.shape)
    params.set_trainable(False)
    return params


def softmax(z):
    e = np.exp(z - np.max(z))
    return e / e.sum()


class TestRerankerDistribution:
    def test_simplex(self):
        scores = Tensor(np.array([0.5, -1.0, 2.0]), requires_grad=True)
        p = reranker_distribution(scores)
        assert abs(p.data.sum() - 1.0) <= 1e-12
        assert np.all(p.data > 0.0)


class TestAdist:
    def test_hand_case(self):
        # target [0.8, 0.2] against uniform p_R: 0.8 ln 1.6 + 0.2 ln 0.4
        p_r = Tensor(np.array([0.5, 0.5]))
        loss = adist_loss(p_r, np.log([0.8, 0.2]), np.ones(2))
        assert abs(loss.item() - 0.19274475702175753) <= 1e-10
        assert abs(loss.item() - 0.19274) <= 1e-5

    def test_zero_when_matching(self):
        target = softmax(np.array([0.4, 1.0, -0.2]) * np.array([1.1, 0.9, 1.0]))
        loss = adist_loss(Tensor(target), np.array([0.4, 1.0, -0.2]), np.array([1.1, 0.9, 1.0]))
        assert abs(loss.item()) <= 1e-12

    def test_uniform_target_from_equal_stats(self):
        target = adist_target(np.full(4, 0.25), np.full(4, 1.3))
        np.testing.assert_allclose(target, 0.25, atol=1e-15)

    def test_nonnegative_on_random_inputs(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = rng.integers(2, 8)
            p_r = Tensor(softmax(rng.normal(size=n)))
            loss = adist_loss(p_r, rng.normal(size=n), rng.uniform(0.5, 2.0, n))
            assert loss.item() >= -1e-12

    def test_stats_from_reader(self):
        params = reader_params()
        ep = gen_single_hop(3, 5, Vocabulary(64))
        alpha, vnorms = adist_stats(ep, params)
        assert alpha.shape == (5,) and vnorms.shape == (5,)
        assert abs(alpha.sum() - 1.0) <= 1e-9
        assert np.all(vnorms > 0)


class TestEmdr:
    def test_equal_likelihoods_collapse(self):
        lik = DocLikelihoods(isolated=np.full(4, -1.7))
        for scores in ([0.0] * 4, [3.0, -1.0, 0.2, 0.9]):
            loss = emdr_loss(reranker_distribution(Tensor(np.array(scores))), lik)
            assert abs(loss.item() - 1.7) <= 1e-12

    def test_onehot_picks_single_likelihood(self):
        lik = DocLikelihoods(isolated=np.array([-0.5, -2.0, -3.0]))
        p_r = Tensor(np.array([0.0, 1.0, 0.0]))
        assert abs(emdr_loss(p_r, lik).item() - 2.0) <= 1e-12

    def test_hand_case_matches_direct_sum(self):
        lik = DocLikelihoods(isolated=np.array([-1.0, -2.5]))
        p = softmax(np.array([0.2, -0.3]))
        expected = -np.log(np.exp(-1.0) * p[0] + np.exp(-2.5) * p[1])
        loss = emdr_loss(reranker_distribution(Tensor(np.array([0.2, -0.3]))), lik)
        assert abs(loss.item() - expected) <= 1e-12

    def test_underflow_guarded(self):
        lik = DocLikelihoods(isolated=np.array([-900.0, -905.0]))
        loss = emdr_loss(Tensor(np.array([0.5, 0.5])), lik)
        assert np.isfinite(loss.item())
        assert abs(loss.item() - (900.0 - np.log(0.5 + 0.5 * np.exp(-5.0)))) <= 1e-9


class TestPdist:
    def test_zero_at_target(self):
        lik = DocLikelihoods(isolated=np.array([-0.2, -1.0, -2.2]))
        target = softmax(lik.isolated)
        assert abs(pdist_loss(Tensor(target), lik).item()) <= 1e-12

    def test_uniform_likelihoods_reduce_to_negentropy(self):
        lik = DocLikelihoods(isolated=np.full(4, -3.0))
        p = softmax(np.array([1.0, 0.0, -1.0, 0.5]))
        expected = float(np.sum(p * np.log(4 * p)))
        assert abs(pdist_loss(Tensor(p), lik).item() - expected) <= 1e-12

    def test_hand_case(self):
        lik = DocLikelihoods(isolated=np.array([-1.0, -0.5, -2.0]))
        p = softmax(np.array([0.3, 0.3, 1.0]))
        target = softmax(lik.isolated)
        expected = float(np.sum(p * np.log(p / target)))
        assert abs(pdist_loss(Tensor(p), lik).item() - expected) <= 1e-12


class TestLoop:
    def test_equal_loo_gives_uniform_target(self):
        lik = DocLikelihoods(isolated=np.zeros(3), leave_one_out=np.full(3, -1.2))
        p = Tensor(softmax(np.array([0.5, -0.5, 0.0])))
        expected = float(np.sum((1 / 3) * np.log((1 / 3) / p.data)))
        assert abs(loop_loss(p, lik).item() - expected) <= 1e-12

    def test_most_hurtful_doc_gets_largest_mass(self):
        loo = np.array([-0.5, -3.0, -1.0])  # removing doc 1 hurts most
        target = softmax(-loo)
        assert np.argmax(target) == 1

    def test_hand_case(self):
        lik = DocLikelihoods(isolated=np.zeros(3), leave_one_out=np.array([-0.3, -1.7, -0.9]))
        p = softmax(np.array([0.2, 0.2, -0.4]))
        target = softmax(-lik.leave_one_out)
        expected = float(np.sum(target * np.log(target / p)))
        assert abs(loop_loss(Tensor(p), lik).item() - expected) <= 1e-12

    def test_requires_leave_one_out(self):
        with pytest.raises(ValueError):
            loop_loss(Tensor(np.array([0.5, 0.5])), DocLikelihoods(isolated=np.zeros(2)))


class TestDocLikelihoods:
    def test_isolated_matches_manual_single_doc_loss(self):
        params = reader_params()
        ep = gen_single_hop(9, 4, Vocabulary(64))
        bank = prefill(ep.docs, params)
        lik = compute_doc_likelihoods(ep, params, bank=bank)
        assert np.all(lik.isolated <= 0.0)
        manual = -len(ep.answer) * language_loss(
            ep.query, ep.answer, bank, DocMask.hard_from_indices([2], 4), params).item()
        assert abs(lik.isolated[2] - manual) <= 1e-12

    def test_leave_one_out(self):
        params = reader_params()
        ep = gen_single_hop(9, 4, Vocabulary(64))
        lik = compute_doc_likelihoods(ep, params, include_loo=True)
        assert lik.leave_one_out.shape == (4,)
        assert np.all(lik.leave_one_out <= 0.0)

    def test_loo_needs_two_docs(self):
        params = reader_params()
        ep = gen_single_hop(9, 4, Vocabulary(64))
        solo = type(ep)(query=ep.query, docs=[ep.docs[ep.gold[0]]], answer=ep.answer, gold=(0,))
        with pytest.raises(ValueError):
            compute_doc_likelihoods(solo, params, include_loo=True)


class TestTargetsDetached:
    def test_only_scorer_receives_gradient(self):
        params = reader_params()
        ep = gen_single_hop(2, 5, Vocabulary(64))
        scorer = MlpScorer(ScorerConfig(vocab_size=64, embed_dim=8, hidden=16, seed=1,
                                        final_scale=0.5))
        lik = compute_doc_likelihoods(ep, params, include_loo=True)
        alpha, vnorms = adist_stats(ep, params)
        from gumbel_rerank.scorer import score_all
        for loss_fn in (
            lambda p: adist_loss(p, alpha, vnorms),
            lambda p: emdr_loss(p, lik),
            lambda p: pdist_loss(p, lik),
            lambda p: loop_loss(p, lik),
        ):
            for t in scorer.tensors() + params.tensors():
                t.zero_grad()
            loss = loss_fn(reranker_distribution(score_all(scorer, ep)))
            ad.backward(loss)
            assert all(np.all(t.grad == 0.0) for t in params.tensors())
            assert any(np.any(t.grad != 0.0) for t in scorer.tensors())


class TestIndependenceBlindness:
    def test_equal_likelihoods_get_equal_target_mass(self):
        # bridge and decoy scored identically in isolation -> identical mass
        lik = np.array([-2.0, -1.5, -2.0, -0.1])
        pdist_target = softmax(lik)
        assert pdist_target[0] == pdist_target[2]
        emdr_weights = np.exp(lik - lik.max())
        assert emdr_weights[0] == emdr_weights[2]

    def test_oracle_episode_ties_are_bitwise(self):
        from gumbel_rerank.datagen import isolated_likelihood_oracle
        vocab = Vocabulary(64)
        ep = gen_multihop(5, 12, 2, vocab)
        oracle = isolated_likelihood_oracle(ep, vocab)
        bridge = ep.indirect[0]
        decoys = [i for i in range(ep.n_docs) if i not in ep.gold]
        target = softmax(oracle)
        for j in decoys:
            assert target[bridge] == target[j]


class TestGrerankLoss:
    def test_kappa_zero_blocks_gradient(self):
        params = reader_params()
        ep = gen_single_hop(6, 5, Vocabulary(64))
        scorer = MlpScorer(ScorerConfig(vocab_size=64, embed_dim=8, hidden=16, seed=2,
                                        final_scale=0.5))
        gparams = GumbelParams(tau=0.5, kappa=0.0, k=2)
        rng = np.random.default_rng(0)
        max_grad = 0.0
        for _ in range(30):
            for t in scorer.tensors():
                t.zero_grad()
            loss, _ = grerank_loss(scorer, ep, params, gparams, rng)
            ad.backward(loss)
            max_grad = max(max_grad, max(np.abs(t.grad).max() for t in scorer.tensors()))
        assert max_grad == 0.0

    def test_uniform_mask_equals_unmasked_loss(self):
        params = reader_params()
        ep = gen_single_hop(7, 5, Vocabulary(64))
        bank = prefill(ep.docs, params)
        soft = language_loss(ep.query, ep.answer, bank,
                             DocMask.soft(Tensor(np.full(5, 1 / 5))), params)
        hard = language_loss(ep.query, ep.answer, bank,
                             DocMask.hard(np.ones(5)), params)
        np.testing.assert_allclose(soft.item(), hard.item(), rtol=1e-12)

    def test_gradient_vs_fd_with_replayed_noise(self):
        params = reader_params()
        ep = gen_single_hop(8, 4, Vocabulary(64))
        scorer = MlpScorer(ScorerConfig(vocab_size=64, embed_dim=6, hidden=8, seed=3,
                                        final_scale=0.5))
        gparams = GumbelParams(tau=0.7, kappa=1.2, k=2)

        def build():
            rng = np.random.default_rng(42)  # identical noise on every call
            loss, _ = grerank_loss(scorer, ep, params, gparams, rng)
            return loss

        finite_difference_check(build, [scorer.w2, scorer.b2, scorer.w1_doc],
                                rel_tol=1e-4)

    def test_no_noise_variant_is_deterministic(self):
        params = reader_params()
        ep = gen_single_hop(9, 5, Vocabulary(64))
        scorer = MlpScorer(ScorerConfig(vocab_size=64, embed_dim=8, hidden=16, seed=4,
                                        final_scale=0.5))
        losses = set()
        for seed in range(3):
            loss, relaxed = grerank_loss(scorer, ep, params, GumbelParams(),
                                         np.random.default_rng(seed), gumbel_noise=False)
            losses.add(loss.item())
            assert abs(relaxed.values.sum() - 1.0) <= 1e-12
        assert len(losses) == 1

import numpy as np
import pytest

from gumbel_rerank import autodiff as ad
from gumbel_rerank.attention import DocMask
from gumbel_rerank.autodiff import DomainError, ShapeError, Tensor
from gumbel_rerank.datagen import gen_single_hop
from gumbel_rerank.reader import (
    ReaderConfig,
    ReaderParams,
    encode_document,
    generate,
    language_loss,
    load_reader,
    prefill,
    save_reader,
)
from gumbel_rerank.training import AdamState, adam_step, evaluate

from util import finite_difference_check


def small_params(vocab_size=16, embed_dim=8, seed=1, randomize_output=False):
    params = ReaderParams(ReaderConfig(vocab_size=vocab_size, embed_dim=embed_dim,
                                       max_doc_len=8, max_answer_len=3, seed=seed))
    if randomize_output:
        rng = np.random.default_rng(seed + 1)
        params.w_out.data[...] = rng.normal(0, 0.3, params.w_out.shape)
    return params


class TestEncoding:
    def test_identical_docs_identical_banks(self):
        params = small_params()
        k1, v1 = encode_document([3, 1, 5], params)
        k2, v2 = encode_document([3, 1, 5], params)
        np.testing.assert_array_equal(k1.data, k2.data)
        np.testing.assert_array_equal(v1.data, v2.data)

    def test_independence_across_documents(self):
        params = small_params()
        bank_a = prefill([[3, 1, 5], [2, 2]], params)
        bank_b = prefill([[3, 1, 5], [7, 7, 7, 7]], params)
        np.testing.assert_array_equal(bank_a.keys.data[:3], bank_b.keys.data[:3])
        np.testing.assert_array_equal(bank_a.values.data[:3], bank_b.values.data[:3])

    def test_position_restarts_per_document(self):
        params = small_params()
        doc = [4, 9]
        solo_k, solo_v = encode_document(doc, params)
        bank = prefill([[1, 2, 3], [5], [8, 8], [6, 7], doc], params)
        sl = bank.doc_slice(4)
        np.testing.assert_array_equal(bank.keys.data[sl], solo_k.data)
        np.testing.assert_array_equal(bank.values.data[sl], solo_v.data)

    def test_token_out_of_range(self):
        with pytest.raises(DomainError):
            encode_document([99], small_params())

    def test_document_length_cap(self):
        with pytest.raises(ShapeError):
            encode_document(list(range(9)) * 2, small_params(vocab_size=32))


class TestPrefill:
    def test_single_doc_equals_encode(self):
        params = small_params()
        bank = prefill([[2, 3, 4]], params)
        k, v = encode_document([2, 3, 4], params)
        np.testing.assert_array_equal(bank.keys.data, k.data)
        np.testing.assert_array_equal(bank.values.data, v.data)

    def test_doc_lengths_preserved(self):
        bank = prefill([[1], [2, 3], [4, 5, 6]], small_params())
        assert bank.doc_lengths == [1, 2, 3]

    def test_permutation_permutes_blocks(self):
        params = small_params()
        docs = [[1, 2], [3], [4, 5, 6]]
        bank = prefill(docs, params)
        bank_p = prefill([docs[2], docs[0], docs[1]], params)
        np.testing.assert_array_equal(bank_p.keys.data,
                                      np.concatenate([bank.keys.data[3:6],
                                                      bank.keys.data[0:2],
                                                      bank.keys.data[2:3]]))

    def test_empty_candidate_set(self):
        with pytest.raises(ShapeError):
            prefill([], small_params())


class TestLanguageLoss:
    def test_untrained_loss_is_log_vocab(self):
        params = ReaderParams(ReaderConfig(vocab_size=2, embed_dim=4, max_doc_len=4,
                                           max_answer_len=2, seed=0))
        bank = prefill([[0, 1], [1, 0]], params)
        loss = language_loss([0], [1], bank, DocMask.hard(np.ones(2)), params)
        assert abs(loss.item() - np.log(2)) <= 1e-9

    def test_loss_bounds_untrained(self):
        for vocab in (8, 16):
            params = small_params(vocab_size=vocab)
            bank = prefill([[1, 2], [3, 4]], params)
            loss = language_loss([5], [6, 7], bank, DocMask.hard(np.ones(2)), params)
            assert 0.0 <= loss.item() <= np.log(vocab) + 0.1

    def test_permutation_invariance_bit_exact(self):
        params = small_params(randomize_output=True)
        docs = [[1, 2, 3], [4, 5], [6], [7, 8, 9, 1]]
        mask_values = np.array([0.9, 0.3, 0.55, 0.7])
        base = language_loss([2, 3], [4], prefill(docs, params),
                             DocMask.soft(Tensor(mask_values)), params).item()
        rng = np.random.default_rng(0)
        for _ in range(10):
            perm = rng.permutation(4)
            loss_p = language_loss([2, 3], [4], prefill([docs[i] for i in perm], params),
                                   DocMask.soft(Tensor(mask_values[perm])), params).item()
            assert loss_p == base

    def test_hard_and_soft_masks_dispatch(self):
        params = small_params(randomize_output=True)
        docs = [[1, 2], [3, 4]]
        bank = prefill(docs, params)
        hard = language_loss([5], [6], bank, DocMask.hard(np.array([1.0, 0.0])), params)
        eps = 1e-12
        soft = language_loss([5], [6], bank,
                             DocMask.soft(Tensor(np.array([1.0 - eps, eps]))), params)
        assert abs(hard.item() - soft.item()) <= 1e-9

    def test_gradient_wrt_mask(self):
        params = small_params(randomize_output=True)
        bank = prefill([[1, 2, 3], [4, 5], [6, 7]], params)
        mask = Tensor(np.array([0.6, 0.3, 0.8]), requires_grad=True)
        finite_difference_check(
            lambda: language_loss([2], [3, 4], bank, DocMask.soft(mask), params),
            [mask], rel_tol=1e-4)

    def test_gradient_wrt_reader_params(self):
        params = small_params(randomize_output=True)
        mask = DocMask.soft(Tensor(np.array([0.6, 0.4])))

        def build():
            bank = prefill([[1, 2], [3, 4]], params)
            return language_loss([5], [6], bank, mask, params)

        finite_difference_check(build, [params.w_out, params.w_query[0], params.embedding],
                                rel_tol=1e-4)

    def test_errors(self):
        params = small_params()
        bank = prefill([[1, 2]], params)
        with pytest.raises(ShapeError):
            language_loss([1], [], bank, DocMask.hard(np.ones(1)), params)
        with pytest.raises(ShapeError):
            language_loss([1], [2], bank, DocMask.hard(np.ones(2)), params)
        with pytest.raises(DomainError):
            language_loss([99], [2], bank, DocMask.hard(np.ones(1)), params)


class TestGenerate:
    def test_deterministic(self):
        params = small_params(randomize_output=True)
        bank = prefill([[1, 2], [3, 4]], params)
        mask = DocMask.hard(np.ones(2))
        assert generate([5], bank, mask, params, 3) == generate([5], bank, mask, params, 3)

    def test_overfit_single_episode_regenerates_answer(self):
        params = small_params(vocab_size=16, embed_dim=8, seed=2)
        params.set_trainable(True)
        docs = [[1, 2, 3], [4, 5, 6], [7, 8, 9]]
        query, answer = [2, 1, 5], [11, 13]
        state = AdamState(params.tensors())
        mask = DocMask.hard(np.ones(3))
        loss_value = np.inf
        for _ in range(400):
            bank = prefill(docs, params)
            loss = language_loss(query, answer, bank, mask, params)
            loss_value = loss.item()
            if loss_value < 0.01:
                break
            for p in params.tensors():
                p.zero_grad()
            ad.backward(loss)
            adam_step(params.tensors(), [p.grad for p in params.tensors()], state, 5e-3)
        assert loss_value < 0.01
        params.set_trainable(False)
        assert generate(query, prefill(docs, params), mask, params, len(answer)) == answer

    def test_mask_excluding_answer_docs_breaks_em(self, mini_reader, mini_task):
        _, held_out = mini_task
        sample = held_out[:30]

        def anti_oracle(episode):
            scores = np.zeros(episode.n_docs)
            scores[list(episode.gold)] = -1.0
            return scores

        res = evaluate("generator", anti_oracle, sample, mini_reader, k=4)
        assert res["exact_match"] <= 0.2

    def test_oracle_mask_preserves_em(self, mini_reader, mini_task):
        _, held_out = mini_task
        sample = held_out[:30]

        def oracle(episode):
            scores = np.zeros(episode.n_docs)
            scores[list(episode.gold)] = 1.0
            return scores

        res = evaluate("generator", oracle, sample, mini_reader, k=4)
        assert res["exact_match"] >= 0.7

    def test_max_len_validation(self):
        params = small_params()
        bank = prefill([[1]], params)
        with pytest.raises(ValueError):
            generate([1], bank, DocMask.hard(np.ones(1)), params, 0)


class TestSerialization:
    def test_round_trip_bit_exact(self, tmp_path):
        params = small_params(vocab_size=32, embed_dim=8, seed=9, randomize_output=True)
        path = tmp_path / "reader.bin"
        save_reader(path, params)
        loaded = load_reader(path)
        assert loaded.config == params.config
        for (_, a), (_, b) in zip(params.named_arrays(), loaded.named_arrays()):
            np.testing.assert_array_equal(a.data, b.data)
        assert not any(t.requires_grad for t in loaded.tensors())
        assert loaded.checksum() == params.checksum()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
        with pytest.raises(ValueError, match="magic"):
            load_reader(path)

    def test_truncated(self, tmp_path):
        params = small_params()
        path = tmp_path / "reader.bin"
        save_reader(path, params)
        data = path.read_bytes()
        path.write_bytes(data[:len(data) // 2])
        with pytest.raises(ValueError, match="truncated"):
            load_reader(path)

    def test_trailing_bytes(self, tmp_path):
        params = small_params()
        path = tmp_path / "reader.bin"
        save_reader(path, params)
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(ValueError, match="trailing"):
            load_reader(path)


class TestFrozenContract:
    def test_checksum_tracks_any_change(self):
        params = small_params()
        before = params.checksum()
        params.w_out.data[0, 0] += 1e-9
        assert params.checksum() != before

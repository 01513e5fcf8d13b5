"""Estimator-style wrapper so the trainer composes with sklearn tooling.

GumbelReranker follows the fit/predict protocol: hyperparameters are plain
constructor attributes (get_params/set_params/clone work), fit learns a
document scorer from labeled episodes, predict returns best-first document
rankings, transform returns raw score vectors, and score reports mean
recall@k against the gold labels.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from .datagen import Episode
from .metrics import ranking_from_scores, recall_at_k
from .reader import ReaderConfig, ReaderParams
from .scorer import score_all
from .training import TrainConfig, pretrain_reader, train

__all__ = ["GumbelReranker", "check_episodes"]


def check_episodes(episodes, require_labels: bool = False) -> list[Episode]:
    """Validate an episode collection before fitting or scoring."""
    episodes = list(episodes)
    if not episodes:
        raise ValueError("expected at least one episode")
    for i, ep in enumerate(episodes):
        if not isinstance(ep, Episode):
            raise TypeError(f"element {i} is {type(ep).__name__}, expected Episode")
        if require_labels and not ep.gold:
            raise ValueError(f"episode {i} has no gold labels")
    n = episodes[0].n_docs
    if any(ep.n_docs != n for ep in episodes):
        raise ValueError("all episodes must have the same candidate count")
    return episodes


class GumbelReranker(BaseEstimator):
    """Document reranker trained end-to-end through sampled attention masks.

    method selects the training signal: "grerank" (end-to-end language loss
    through a relaxed top-k mask) or one of the reader-supervised baselines
    ("adist", "emdr", "pdist", "loop").  A small frozen reader is pretrained
    internally during fit unless one is supplied.
    """

    def __init__(self, method="grerank", tau=0.5, kappa=1.0, k=5,
                 learning_rate=1e-3, steps=500, batch_size=4, eval_k=5,
                 reader_steps=1500, reader_embed_dim=32, vocab_size=64,
                 max_doc_len=8, max_answer_len=2, random_state=0):
        self.method = method
        self.tau = tau
        self.kappa = kappa
        self.k = k
        self.learning_rate = learning_rate
        self.steps = steps
        self.batch_size = batch_size
        self.eval_k = eval_k
        self.reader_steps = reader_steps
        self.reader_embed_dim = reader_embed_dim
        self.vocab_size = vocab_size
        self.max_doc_len = max_doc_len
        self.max_answer_len = max_answer_len
        self.random_state = random_state

    def fit(self, episodes, y=None, reader: ReaderParams | None = None):
        episodes = check_episodes(episodes, require_labels=True)
        if reader is None:
            reader = pretrain_reader(
                episodes,
                ReaderConfig(vocab_size=self.vocab_size, embed_dim=self.reader_embed_dim,
                             max_doc_len=self.max_doc_len, max_answer_len=self.max_answer_len,
                             seed=self.random_state),
                steps=self.reader_steps, seed=self.random_state)
        config = TrainConfig(
            method=self.method, tau=self.tau, kappa=self.kappa, k=self.k,
            learning_rate=self.learning_rate, steps=self.steps,
            batch_size=self.batch_size, eval_interval=max(1, self.steps),
            eval_k=self.eval_k, seed_data=self.random_state,
            seed_noise=self.random_state + 1, seed_init=self.random_state + 2)
        result = train(config, episodes, [], reader)
        self.reader_ = reader
        self.scorer_ = result.model
        self.records_ = result.records
        return self

    def _require_fitted(self):
        if not hasattr(self, "scorer_"):
            raise RuntimeError("call fit before predict/transform/score")

    def transform(self, episodes) -> np.ndarray:
        """Score matrix, one row of document scores per episode."""
        self._require_fitted()
        episodes = check_episodes(episodes)
        return np.stack([score_all(self.scorer_, ep).data for ep in episodes])

    def predict(self, episodes) -> list[list[int]]:
        """Best-first document ranking per episode."""
        self._require_fitted()
        episodes = check_episodes(episodes)
        return [ranking_from_scores(score_all(self.scorer_, ep).data) for ep in episodes]

    def score(self, episodes, y=None) -> float:
        """Mean recall@eval_k of the gold documents."""
        self._require_fitted()
        episodes = check_episodes(episodes, require_labels=True)
        rankings = self.predict(episodes)
        return float(np.mean([
            recall_at_k(r, ep.gold, self.eval_k) for r, ep in zip(rankings, episodes)
        ]))

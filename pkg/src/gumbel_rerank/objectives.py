"""Training losses for the scorer: the end-to-end masked-attention loss and
four distillation baselines supervised by the frozen reader.

Every baseline builds a constant target distribution (no gradient flows into
the reader) and penalizes the scorer's softmax distribution against it:

* adist -- target from unmasked attention mass weighted by value norms,
           KL(target || p_R).
* emdr  -- negative log of the likelihood marginalized over documents,
           gradient into p_R only.
* pdist -- target softmax of isolated per-document answer log-likelihoods,
           KL(p_R || target).
* loop  -- target softmax of negated leave-one-out log-likelihoods,
           KL(target || p_R).

The end-to-end loss (grerank) instead samples a relaxed top-k mask from the
scores and differentiates the reader's language loss through the mask alone.
All losses are minimized.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import DocMask
from .autodiff import Tensor
from .datagen import Episode
from .reader import ReaderParams, language_loss, prefill, unmasked_attention_stats
from .sampling import GumbelParams, RelaxedMask, relaxed_topk
from .scorer import MlpScorer, score_all

__all__ = [
    "DocLikelihoods",
    "reranker_distribution",
    "compute_doc_likelihoods",
    "grerank_loss",
    "adist_loss",
    "adist_target",
    "emdr_loss",
    "pdist_loss",
    "loop_loss",
]


@dataclass
class DocLikelihoods:
    """Frozen-reader answer log-likelihoods per candidate document.

    isolated[i] = log p(answer | query, doc_i) from a one-hot hard mask;
    leave_one_out[i] = log p(answer | all docs except i), when computed.
    Log-likelihoods sum over answer tokens and are always <= 0.
    """

    isolated: np.ndarray
    leave_one_out: np.ndarray | None = None


def reranker_distribution(scores: Tensor) -> Tensor:
    """Softmax of the score vector: strictly positive, sums to one."""
    return ad.softmax(ad.as_tensor(scores), axis=-1)


def compute_doc_likelihoods(episode: Episode, params: ReaderParams, bank=None,
                            include_loo: bool = False) -> DocLikelihoods:
    """Score the answer under one-hot (and optionally leave-one-out) hard masks."""
    if bank is None:
        bank = prefill(episode.docs, params)
    n = episode.n_docs
    n_ans = len(episode.answer)
    isolated = np.empty(n)
    for i in range(n):
        mask = DocMask.hard_from_indices([i], n)
        isolated[i] = -n_ans * language_loss(episode.query, episode.answer,
                                             bank, mask, params).item()
    loo = None
    if include_loo:
        if n < 2:
            raise ValueError("leave-one-out likelihoods need at least 2 documents")
        loo = np.empty(n)
        for i in range(n):
            keep = np.ones(n)
            keep[i] = 0.0
            loo[i] = -n_ans * language_loss(episode.query, episode.answer,
                                            bank, DocMask.hard(keep), params).item()
    return DocLikelihoods(isolated=isolated, leave_one_out=loo)


def grerank_loss(scorer: MlpScorer, episode: Episode, params: ReaderParams,
                 gparams: GumbelParams, rng: np.random.Generator, bank=None,
                 gumbel_noise: bool = True) -> tuple[Tensor, RelaxedMask]:
    """Reader language loss under a fresh sampled mask of the current scores.

    The reader is frozen, so the gradient reaches the scorer only through the
    mask.  With gumbel_noise=False the mask degenerates to the deterministic
    softmax(kappa * scores / tau) -- the no-noise ablation arm.
    """
    if bank is None:
        bank = prefill(episode.docs, params)
    scores = score_all(scorer, episode)
    if gumbel_noise:
        relaxed = relaxed_topk(scores, gparams, rng)
    else:
        soft = ad.softmax(ad.divide(ad.mul(ad.constant(gparams.kappa), scores),
                                    ad.constant(gparams.tau)), axis=-1)
        relaxed = RelaxedMask(mask=soft, params=gparams, draws=[])
    loss = language_loss(episode.query, episode.answer, bank,
                         DocMask.soft(relaxed.mask), params)
    return loss, relaxed


def _softmax_np(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def adist_target(attention_mass: np.ndarray, value_norms: np.ndarray) -> np.ndarray:
    """softmax over attention-mass-times-value-norm relevance scores."""
    return _softmax_np(np.asarray(attention_mass) * np.asarray(value_norms))


def adist_loss(p_r: Tensor, attention_mass: np.ndarray, value_norms: np.ndarray) -> Tensor:
    """KL(p_attn || p_R) with the attention-derived target held constant."""
    target = adist_target(attention_mass, value_norms)
    entropy_term = float(np.sum(target * np.log(target)))
    cross = ad.sum_(ad.mul(ad.constant(target), ad.log(p_r)))
    return ad.sub(ad.constant(entropy_term), cross)


def adist_stats(episode: Episode, params: ReaderParams, bank=None):
    """Unmasked attention mass and value norms for an episode's documents."""
    if bank is None:
        bank = prefill(episode.docs, params)
    return unmasked_attention_stats(episode.query, episode.answer, bank, params)


def emdr_loss(p_r: Tensor, likelihoods: DocLikelihoods) -> Tensor:
    """Negated log marginal likelihood sum_k p_lm(a|q,p_k) p_R(p_k|q).

    Guarded by log-sum-exp: the largest isolated likelihood is factored out
    before exponentiation.
    """
    ll = np.asarray(likelihoods.isolated, dtype=np.float64)
    m = float(ll.max())
    weights = np.exp(ll - m)  # constants in (0, 1]
    marginal = ad.sum_(ad.mul(ad.constant(weights), p_r))
    return ad.neg(ad.add(ad.log(marginal), ad.constant(m)))


def pdist_loss(p_r: Tensor, likelihoods: DocLikelihoods) -> Tensor:
    """KL(p_R || softmax(isolated log-likelihoods)), target constant."""
    target = _softmax_np(likelihoods.isolated)
    log_gap = ad.sub(ad.log(p_r), ad.constant(np.log(target)))
    return ad.sum_(ad.mul(p_r, log_gap))


def loop_loss(p_r: Tensor, likelihoods: DocLikelihoods) -> Tensor:
    """KL(p_loop || p_R) where p_loop = softmax(-leave-one-out log-likelihoods).

    A document whose removal hurts the answer likelihood most gets the largest
    target mass.
    """
    if likelihoods.leave_one_out is None:
        raise ValueError("loop_loss needs leave-one-out likelihoods")
    target = _softmax_np(-np.asarray(likelihoods.leave_one_out))
    entropy_term = float(np.sum(target * np.log(target)))
    cross = ad.sum_(ad.mul(ad.constant(target), ad.log(p_r)))
    return ad.sub(ad.constant(entropy_term), cross)

"""Differentiable top-k document selection for end-to-end reranker training.

A reranker's discrete keep-these-k choice is recast as a document-wise
attention mask; Gumbel perturbation plus a relaxed top-k (elementwise max of
k temperature-softened one-hot samples) makes the mask differentiable, so the
reranker trains directly on the generator's language loss.  The package also
ships the four reader-supervised distillation baselines, a tiny
parallel-prefill reader, synthetic single/multi-hop retrieval tasks with
known evidence labels, and a deterministic experiment runner.
"""

from .attention import DocMask, TokenBank, attend, attention, dma, masked_attention
from .autodiff import DomainError, ShapeError, Tensor, backward
from .datagen import Episode, Vocabulary, gen_multihop, gen_single_hop, read_corpus, write_corpus
from .estimator import GumbelReranker
from .metrics import mrr, ndcg_at_k, ranking_from_scores, recall_at_k
from .objectives import (
    DocLikelihoods,
    adist_loss,
    compute_doc_likelihoods,
    emdr_loss,
    grerank_loss,
    loop_loss,
    pdist_loss,
    reranker_distribution,
)
from .reader import ReaderConfig, ReaderParams, generate, language_loss, prefill
from .sampling import (
    GumbelParams,
    RelaxedMask,
    gumbel_noise,
    hard_topk,
    perturb,
    relaxed_onehot,
    relaxed_topk,
    selection_probability,
)
from .scorer import FreeWeights, MlpScorer, ScorerConfig, free_weights_mask, score, score_all
from .training import (
    RunRecord,
    TrainConfig,
    TrainResult,
    ablate_gumbel,
    adam_step,
    evaluate,
    pretrain_reader,
    sweep,
    train,
)

__version__ = "0.1.0"

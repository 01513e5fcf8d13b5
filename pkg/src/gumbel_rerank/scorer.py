"""Trainable relevance scorers.

MlpScorer is the desk-scale reranker: mean-pooled bag-of-embedding features
for the query and the document feed a two-layer tanh perceptron that emits one
scalar per (query, document) pair.  Its embedding table is its own -- nothing
is shared with the reader, mirroring separate reranker/reader models.

FreeWeights drops the scorer entirely: one learnable scalar per document of a
single fixed episode, initialized exactly to zero, trained directly through
the sampled mask.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .sampling import GumbelParams, RelaxedMask, relaxed_topk

__all__ = [
    "ScorerConfig",
    "MlpScorer",
    "FreeWeights",
    "score",
    "score_all",
    "free_weights_mask",
    "save_scorer",
    "load_scorer",
    "SCORER_MAGIC",
]

SCORER_MAGIC = b"GRKSCR01"
SCORER_VERSION = 1


@dataclass(frozen=True)
class ScorerConfig:
    vocab_size: int = 64
    embed_dim: int = 16
    hidden: int = 32
    seed: int = 0
    # Std-dev of the output layer init; 0.0 keeps it exactly zero so every
    # document starts with score 0 (uniform selection probability).
    final_scale: float = 0.0

    def __post_init__(self):
        if self.vocab_size <= 0 or self.embed_dim <= 0 or self.hidden <= 0:
            raise ValueError("vocab_size, embed_dim and hidden must be positive")
        if self.final_scale < 0:
            raise ValueError("final_scale must be nonnegative")


class MlpScorer:
    """score = w2 . tanh(W1q @ mean(emb(query)) + W1d @ mean(emb(doc)) + b1) + b2."""

    def __init__(self, config: ScorerConfig, trainable: bool = True):
        self.config = config
        rng = np.random.default_rng(config.seed)
        d, h = config.embed_dim, config.hidden
        self.embedding = Tensor(rng.normal(0.0, 0.5, (config.vocab_size, d)),
                                requires_grad=trainable)
        scale = 1.0 / np.sqrt(d)
        self.w1_query = Tensor(rng.normal(0.0, scale, (d, h)), requires_grad=trainable)
        self.w1_doc = Tensor(rng.normal(0.0, scale, (d, h)), requires_grad=trainable)
        self.b1 = Tensor(np.zeros(h), requires_grad=trainable)
        if config.final_scale > 0:
            w2 = rng.normal(0.0, config.final_scale, (h, 1))
        else:
            w2 = np.zeros((h, 1))
        self.w2 = Tensor(w2, requires_grad=trainable)
        self.b2 = Tensor(np.zeros(1), requires_grad=trainable)

    def named_arrays(self) -> list[tuple[str, Tensor]]:
        return [("embedding", self.embedding), ("w1_query", self.w1_query),
                ("w1_doc", self.w1_doc), ("b1", self.b1), ("w2", self.w2), ("b2", self.b2)]

    def tensors(self) -> list[Tensor]:
        return [t for _, t in self.named_arrays()]

    def set_trainable(self, flag: bool) -> None:
        for t in self.tensors():
            t.requires_grad = flag

    def checksum(self) -> str:
        h = hashlib.sha256()
        for _, t in self.named_arrays():
            h.update(t.data.tobytes())
        return h.hexdigest()


def _check_tokens(scorer: MlpScorer, tokens, what: str) -> list[int]:
    toks = [int(t) for t in tokens]
    if not toks:
        raise ad.ShapeError(f"cannot embed an empty {what}")
    for t in toks:
        if not 0 <= t < scorer.config.vocab_size:
            raise ad.DomainError(f"token {t} out of range for vocab {scorer.config.vocab_size}")
    return toks


def _scores(scorer: MlpScorer, query, docs) -> Tensor:
    """Score vector over docs for one query, computed as one batched MLP pass."""
    d, h = scorer.config.embed_dim, scorer.config.hidden
    query = _check_tokens(scorer, query, "query")
    docs = [_check_tokens(scorer, doc, "document") for doc in docs]
    n = len(docs)
    q_emb = ad.gather_rows(scorer.embedding, query)
    q_mean = ad.reshape(ad.divide(ad.sum_(q_emb, axis=0), ad.constant(float(len(query)))), (1, d))
    # Per-document exact sums (not one averaging matmul): BLAS accumulation
    # order depends on row position, and scores must permute bit-exactly with
    # the documents.
    doc_rows = []
    for doc in docs:
        emb = ad.gather_rows(scorer.embedding, doc)
        mean_row = ad.divide(ad.sum_(emb, axis=0), ad.constant(float(len(doc))))
        doc_rows.append(ad.reshape(mean_row, (1, d)))
    doc_mean = ad.vstack(doc_rows)
    ones_col = ad.constant(np.ones((n, 1)))
    pre = ad.add(
        ad.add(ad.matmul(ad.matmul(ones_col, q_mean), scorer.w1_query),
               ad.matmul(doc_mean, scorer.w1_doc)),
        ad.matmul(ones_col, ad.reshape(scorer.b1, (1, h))))
    hid = ad.tanh(pre)
    out = ad.add(ad.matmul(hid, scorer.w2), ad.matmul(ones_col, ad.reshape(scorer.b2, (1, 1))))
    return ad.reshape(out, (n,))


def score(scorer: MlpScorer, query, doc) -> Tensor:
    """Scalar relevance of one document to one query; differentiable in the scorer."""
    return ad.reshape(_scores(scorer, query, [doc]), ())


def score_all(scorer: MlpScorer, episode) -> Tensor:
    """Length-n score vector, one entry per candidate document in episode order.

    One batched pass over the documents; agrees with n independent score()
    calls up to BLAS kernel rounding (~1e-15 relative).
    """
    return _scores(scorer, episode.query, episode.docs)


class FreeWeights:
    """Per-document learnable scalars bound to one fixed episode; starts at zero."""

    def __init__(self, n_docs: int, episode_index: int = 0):
        if n_docs < 1:
            raise ValueError("FreeWeights needs at least one document")
        self.weights = Tensor(np.zeros(n_docs), requires_grad=True)
        self.episode_index = episode_index
        assert np.all(self.weights.data == 0.0), "free weights must start exactly at zero"

    @property
    def n_docs(self) -> int:
        return self.weights.size


def free_weights_mask(fw: FreeWeights, params: GumbelParams,
                      rng: np.random.Generator) -> RelaxedMask:
    """Relaxed top-k mask over the free weights; same mechanism as for scores."""
    return relaxed_topk(fw.weights, params, rng)


def save_scorer(path, scorer: MlpScorer) -> None:
    config = scorer.config
    ints = [SCORER_VERSION, config.vocab_size, config.embed_dim, config.hidden, config.seed]
    with open(path, "wb") as fh:
        fh.write(SCORER_MAGIC)
        fh.write(struct.pack("<" + "q" * len(ints), *ints))
        for _, t in scorer.named_arrays():
            fh.write(t.data.astype("<f8").tobytes())


def load_scorer(path) -> MlpScorer:
    with open(path, "rb") as fh:
        magic = fh.read(len(SCORER_MAGIC))
        if magic != SCORER_MAGIC:
            raise ValueError(f"bad scorer params magic {magic!r}")
        raw = fh.read(5 * 8)
        if len(raw) != 5 * 8:
            raise ValueError("scorer params file truncated")
        version, vocab, dim, hidden, seed = struct.unpack("<qqqqq", raw)
        if version != SCORER_VERSION:
            raise ValueError(f"unsupported scorer params version {version}")
        config = ScorerConfig(vocab_size=vocab, embed_dim=dim, hidden=hidden, seed=seed)
        scorer = MlpScorer(config, trainable=False)
        for _, t in scorer.named_arrays():
            raw = fh.read(t.data.size * 8)
            if len(raw) != t.data.size * 8:
                raise ValueError("scorer params file truncated")
            t.data[...] = np.frombuffer(raw, dtype="<f8").reshape(t.shape)
        if fh.read(1):
            raise ValueError("trailing bytes in scorer params file")
    return scorer

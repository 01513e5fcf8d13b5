"""A tiny parallel-prefill generator in the fusion-in-decoder mold.

Documents are encoded independently of one another, each with positional
encodings restarting at zero, so no information leaks across candidates and
no candidate is privileged by its slot.  The decoder is deliberately small: a
mean-pooled query-plus-prefix state refined by a fixed number of chained
cross-attention hops over the token bank (two by default -- the second hop is
what lets the model follow an entity chain across documents).  The
document-wise mask is applied identically at every hop.

Parameters serialize to a flat little-endian binary file: an 8-byte magic,
a version word, the config integers, then each weight array row-major in
declared order.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .attention import DocMask, TokenBank, attend, attention, dma, masked_attention
from .autodiff import DomainError, ShapeError, Tensor

__all__ = [
    "ReaderConfig",
    "ReaderParams",
    "encode_document",
    "prefill",
    "language_loss",
    "generate",
    "save_reader",
    "load_reader",
    "PARAMS_MAGIC",
]

PARAMS_MAGIC = b"GRKRDR01"
PARAMS_VERSION = 1


@dataclass(frozen=True)
class ReaderConfig:
    vocab_size: int = 64
    embed_dim: int = 32
    max_doc_len: int = 8
    max_answer_len: int = 2
    seed: int = 0
    n_hops: int = 2

    def __post_init__(self):
        for name in ("vocab_size", "embed_dim", "max_doc_len", "max_answer_len", "n_hops"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.embed_dim % 2 != 0:
            raise ValueError("embed_dim must be even for sinusoidal positions")


class ReaderParams:
    """Embedding table, key/value projections, per-hop query projections,
    and the vocab output projection.

    The output projection starts at zero so an untrained reader predicts the
    uniform distribution (loss exactly log vocab_size).
    """

    def __init__(self, config: ReaderConfig, trainable: bool = True):
        self.config = config
        rng = np.random.default_rng(config.seed)
        d, v = config.embed_dim, config.vocab_size
        scale = 1.0 / np.sqrt(d)
        self.embedding = Tensor(rng.normal(0.0, 0.5, (v, d)), requires_grad=trainable)
        self.w_key = Tensor(rng.normal(0.0, scale, (d, d)), requires_grad=trainable)
        self.w_value = Tensor(rng.normal(0.0, scale, (d, d)), requires_grad=trainable)
        self.w_query = [
            Tensor(rng.normal(0.0, scale, (d, d)), requires_grad=trainable)
            for _ in range(config.n_hops)
        ]
        self.w_out = Tensor(np.zeros((d, v)), requires_grad=trainable)

    def named_arrays(self) -> list[tuple[str, Tensor]]:
        named = [("embedding", self.embedding), ("w_key", self.w_key), ("w_value", self.w_value)]
        named += [(f"w_query_{i}", t) for i, t in enumerate(self.w_query)]
        named.append(("w_out", self.w_out))
        return named

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


@lru_cache(maxsize=None)
def _positions(length: int, dim: int) -> np.ndarray:
    """Sinusoidal positional encodings; cached, treat as read-only."""
    pos = np.arange(length)[:, None]
    i = np.arange(dim // 2)[None, :]
    angle = pos / np.power(10000.0, 2.0 * i / dim)
    out = np.zeros((length, dim))
    out[:, 0::2] = np.sin(angle)
    out[:, 1::2] = np.cos(angle)
    return out


def _check_tokens(tokens, config: ReaderConfig, what: str) -> list[int]:
    toks = [int(t) for t in tokens]
    for t in toks:
        if not 0 <= t < config.vocab_size:
            raise DomainError(f"{what} token {t} out of range for vocab {config.vocab_size}")
    return toks


def _embed_sequence(tokens: list[int], params: ReaderParams) -> Tensor:
    """Token embeddings plus positions restarting at 0 for this sequence."""
    emb = ad.gather_rows(params.embedding, tokens)
    return ad.add(emb, ad.constant(_positions(len(tokens), params.config.embed_dim)))


def encode_document(doc_tokens, params: ReaderParams) -> tuple[Tensor, Tensor]:
    """Keys and values for one document, independent of all other documents.

    Each token row carries its embedding, its within-document position, and
    the document's mean embedding (cheap intra-document context so keys can
    reflect what the document is about).
    """
    config = params.config
    toks = _check_tokens(doc_tokens, config, "document")
    if not toks:
        raise ShapeError("encode_document: empty document")
    if len(toks) > config.max_doc_len:
        raise ShapeError(f"document length {len(toks)} exceeds max_doc_len {config.max_doc_len}")
    emb = ad.gather_rows(params.embedding, toks)
    x = ad.add(emb, ad.constant(_positions(len(toks), config.embed_dim)))
    doc_mean = ad.divide(ad.sum_(emb, axis=0), ad.constant(float(len(toks))))
    tiled = ad.matmul(ad.constant(np.ones((len(toks), 1))), ad.reshape(doc_mean, (1, config.embed_dim)))
    x = ad.add(x, tiled)
    return ad.matmul(x, params.w_key), ad.matmul(x, params.w_value)


def prefill(docs, params: ReaderParams) -> TokenBank:
    """Encode every candidate document independently and concatenate the banks."""
    docs = list(docs)
    if not docs:
        raise ShapeError("prefill: empty candidate set")
    keys, values, lengths = [], [], []
    for doc in docs:
        k, v = encode_document(doc, params)
        keys.append(k)
        values.append(v)
        lengths.append(k.shape[0])
    return TokenBank(keys=ad.vstack(keys), values=ad.vstack(values), doc_lengths=lengths)


def _decoder_state(query: list[int], prefix: list[int], params: ReaderParams) -> Tensor:
    seq = query + prefix
    x = _embed_sequence(seq, params)
    return ad.divide(ad.sum_(x, axis=0), ad.constant(float(len(seq))))


def _cross_attend(state: Tensor, bank: TokenBank, mask: DocMask, params: ReaderParams):
    """Chained cross-attention hops; returns (final state, per-hop prob tables)."""
    d = params.config.embed_dim
    h = state
    tables = []
    for w_q in params.w_query:
        q = ad.reshape(ad.matmul(ad.reshape(h, (1, d)), w_q), (d,))
        if mask.kind == "soft":
            probs = dma(q, bank, mask)
        else:
            probs = masked_attention(q, bank, mask)
        tables.append(probs)
        h = ad.add(h, attend(probs, bank))
    return h, tables


def _step_logits(query, prefix, bank, mask, params):
    state = _decoder_state(query, prefix, params)
    h, tables = _cross_attend(state, bank, mask, params)
    d = params.config.embed_dim
    logits = ad.reshape(ad.matmul(ad.reshape(h, (1, d)), params.w_out), (params.config.vocab_size,))
    return logits, tables


def _nll(logits: Tensor, target: int, vocab_size: int) -> Tensor:
    # logsumexp(logits) - logits[target], stabilized by the constant max.
    shift = ad.constant(float(np.max(logits.data)))
    shifted = ad.sub(logits, shift)
    lse = ad.add(ad.log(ad.sum_(ad.exp(shifted))), shift)
    onehot = np.zeros(vocab_size)
    onehot[target] = 1.0
    picked = ad.sum_(ad.mul(logits, ad.constant(onehot)))
    return ad.sub(lse, picked)


def language_loss(query, answer, bank: TokenBank, mask: DocMask, params: ReaderParams) -> Tensor:
    """Teacher-forced mean negative log-likelihood of the answer tokens.

    Soft masks attend through dma, hard masks through masked_attention; the
    result is differentiable in the mask and in the reader parameters.
    """
    config = params.config
    query = _check_tokens(query, config, "query")
    answer = _check_tokens(answer, config, "answer")
    if not answer:
        raise ShapeError("language_loss: empty answer")
    if not isinstance(mask, DocMask):
        raise ValueError("language_loss: mask must be a DocMask")
    if len(mask) != bank.n_docs:
        raise ShapeError(f"mask length {len(mask)} != {bank.n_docs} documents")
    losses = []
    for s, target in enumerate(answer):
        logits, _ = _step_logits(query, answer[:s], bank, mask, params)
        losses.append(_nll(logits, target, config.vocab_size))
    return ad.divide(ad.sum_(ad.concat([ad.reshape(l, (1,)) for l in losses])),
                     ad.constant(float(len(losses))))


def unmasked_attention_stats(query, answer, bank: TokenBank, params: ReaderParams):
    """Per-document attention mass and mean value norms under plain attention.

    Attention mass is summed over each document's tokens and averaged over
    decode steps and hops.  Used to build attention-distillation targets.
    """
    config = params.config
    query = _check_tokens(query, config, "query")
    answer = _check_tokens(answer, config, "answer")
    d = config.embed_dim
    masses = np.zeros(bank.n_docs)
    sites = 0
    for s in range(len(answer)):
        state = _decoder_state(query, answer[:s], params)
        h = state
        for w_q in params.w_query:
            q = ad.reshape(ad.matmul(ad.reshape(h, (1, d)), w_q), (d,))
            probs = attention(q, bank)
            masses += bank.segment.T @ probs.data
            sites += 1
            h = ad.add(h, attend(probs, bank))
    value_norms = np.array([
        np.linalg.norm(bank.values.data[bank.doc_slice(i)], axis=1).mean()
        for i in range(bank.n_docs)
    ])
    return masses / sites, value_norms


def generate(query, bank: TokenBank, mask: DocMask, params: ReaderParams, max_len: int) -> list[int]:
    """Greedy argmax decoding under a hard document mask; deterministic."""
    if max_len < 1:
        raise ValueError("generate: max_len must be >= 1")
    if mask.kind != "hard":
        raise ValueError("generate: expects a hard DocMask")
    config = params.config
    query = _check_tokens(query, config, "query")
    out: list[int] = []
    for _ in range(max_len):
        logits, _ = _step_logits(query, out, bank, mask, params)
        out.append(int(np.argmax(logits.data)))
    return out


def _write_array(fh, arr: np.ndarray) -> None:
    fh.write(arr.astype("<f8").tobytes())


def save_reader(path, params: ReaderParams) -> None:
    config = params.config
    ints = [PARAMS_VERSION, config.vocab_size, config.embed_dim, config.max_doc_len,
            config.max_answer_len, config.seed, config.n_hops]
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack("<" + "q" * len(ints), *ints))
        for _, t in params.named_arrays():
            _write_array(fh, t.data)


def _read_exact(fh, n: int) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise ValueError("reader params file truncated")
    return buf


def load_reader(path) -> ReaderParams:
    with open(path, "rb") as fh:
        magic = _read_exact(fh, len(PARAMS_MAGIC))
        if magic != PARAMS_MAGIC:
            raise ValueError(f"bad reader params magic {magic!r}")
        version, vocab, dim, max_doc, max_ans, seed, hops = struct.unpack(
            "<qqqqqqq", _read_exact(fh, 7 * 8))
        if version != PARAMS_VERSION:
            raise ValueError(f"unsupported reader params version {version}")
        config = ReaderConfig(vocab_size=vocab, embed_dim=dim, max_doc_len=max_doc,
                              max_answer_len=max_ans, seed=seed, n_hops=hops)
        params = ReaderParams(config, trainable=False)
        for _, t in params.named_arrays():
            raw = _read_exact(fh, t.data.size * 8)
            t.data[...] = np.frombuffer(raw, dtype="<f8").reshape(t.shape)
        if fh.read(1):
            raise ValueError("trailing bytes in reader params file")
    return params

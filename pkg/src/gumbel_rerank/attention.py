"""Attention over per-document token banks, with document-wise masking.

Three variants share one score computation (scaled dot products against all
token keys, globally max-stabilized):

* ``attention``       -- plain softmax over every token of every document.
* ``masked_attention`` -- hard 0/1 document mask; masked documents get
                          exactly zero and the rest renormalize.
* ``dma``             -- soft positive document mask applied multiplicatively
                          inside the normalization, differentiable in the
                          queries, keys, and the mask itself.

Probability tables are flat tensors over all T tokens in bank order; the
bank's doc_lengths give the document blocks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import DomainError, ShapeError, Tensor

__all__ = ["TokenBank", "DocMask", "attention", "masked_attention", "dma", "attend"]


@dataclass
class TokenBank:
    """Per-token key/value rows for n documents, concatenated in document order."""

    keys: Tensor          # (T, d_k)
    values: Tensor        # (T, d_v)
    doc_lengths: list[int]

    def __post_init__(self):
        if self.keys.data.ndim != 2 or self.values.data.ndim != 2:
            raise ShapeError("TokenBank: keys and values must be 2-d")
        total = sum(self.doc_lengths)
        if self.keys.shape[0] != total or self.values.shape[0] != total:
            raise ShapeError(
                f"TokenBank: doc_lengths sum {total} does not match "
                f"{self.keys.shape[0]} key rows / {self.values.shape[0]} value rows"
            )
        if any(l <= 0 for l in self.doc_lengths):
            raise ShapeError("TokenBank: every document needs at least one token")
        # 0/1 token-to-document indicator, used to expand document masks onto
        # tokens (and to pool token quantities back onto documents).
        seg = np.zeros((total, len(self.doc_lengths)))
        off = 0
        for i, l in enumerate(self.doc_lengths):
            seg[off:off + l, i] = 1.0
            off += l
        self.segment = seg

    @property
    def n_docs(self) -> int:
        return len(self.doc_lengths)

    @property
    def n_tokens(self) -> int:
        return self.keys.shape[0]

    @property
    def dim(self) -> int:
        return self.keys.shape[1]

    def doc_slice(self, i: int) -> slice:
        off = sum(self.doc_lengths[:i])
        return slice(off, off + self.doc_lengths[i])


class DocMask:
    """Document-wise mask: hard (0/1 ndarray) or soft (positive Tensor)."""

    def __init__(self, kind: str, values):
        if kind not in ("hard", "soft"):
            raise ValueError(f"mask kind must be 'hard' or 'soft', got {kind!r}")
        self.kind = kind
        if kind == "hard":
            v = np.asarray(values, dtype=np.float64)
            if not np.all((v == 0.0) | (v == 1.0)):
                raise DomainError("hard mask entries must be exactly 0 or 1")
            if not np.any(v == 1.0):
                raise DomainError("hard mask must select at least one document")
            self.values = v
        else:
            t = ad.as_tensor(values)
            if np.any(t.data <= 0.0):
                raise DomainError("soft mask entries must be strictly positive")
            self.values = t

    @classmethod
    def hard(cls, values) -> "DocMask":
        return cls("hard", values)

    @classmethod
    def hard_from_indices(cls, indices, n: int) -> "DocMask":
        v = np.zeros(n)
        v[list(indices)] = 1.0
        return cls("hard", v)

    @classmethod
    def soft(cls, values) -> "DocMask":
        return cls("soft", values)

    def __len__(self) -> int:
        return self.values.size if self.kind == "hard" else self.values.size


def _token_scores(query: Tensor, bank: TokenBank) -> Tensor:
    query = ad.as_tensor(query)
    if query.data.ndim != 1 or query.size != bank.dim:
        raise ShapeError(f"query shape {query.shape} does not match key dim {bank.dim}")
    # Elementwise product + exact row sum rather than a BLAS matvec: GEMM
    # kernels accumulate in row-position-dependent order, which would break
    # the bit-exact document-permutation equalities this module guarantees.
    tiled_q = ad.matmul(ad.constant(np.ones((bank.n_tokens, 1))),
                        ad.reshape(query, (1, bank.dim)))
    scores = ad.sum_(ad.mul(bank.keys, tiled_q), axis=1)
    return ad.divide(scores, ad.constant(np.sqrt(float(bank.dim))))


def _stabilized_exp(scores: Tensor) -> Tensor:
    # Subtracting the global max as a constant leaves both the softmax value
    # and its gradient exact (shift invariance) while preventing overflow.
    shift = ad.constant(float(np.max(scores.data)))
    return ad.exp(ad.sub(scores, shift))


def _expand_mask(mask: Tensor, bank: TokenBank) -> Tensor:
    if mask.size != bank.n_docs:
        raise ShapeError(f"mask length {mask.size} != {bank.n_docs} documents")
    col = ad.reshape(ad.as_tensor(mask), (bank.n_docs, 1))
    return ad.reshape(ad.matmul(ad.constant(bank.segment), col), (bank.n_tokens,))


def attention(query: Tensor, bank: TokenBank) -> Tensor:
    """Softmax over all (document, token) pairs; sums to 1."""
    e = _stabilized_exp(_token_scores(query, bank))
    return ad.divide(e, ad.sum_(e))


def masked_attention(query: Tensor, bank: TokenBank, mask: DocMask) -> Tensor:
    """Attention restricted to the documents a hard mask selects.

    Tokens of masked documents get exactly 0; the rest equal plain attention
    computed over the selected sub-bank.
    """
    if not isinstance(mask, DocMask) or mask.kind != "hard":
        raise ValueError("masked_attention requires a hard DocMask")
    e = _stabilized_exp(_token_scores(query, bank))
    token_mask = _expand_mask(ad.constant(mask.values), bank)
    numer = ad.mul(e, token_mask)
    return ad.divide(numer, ad.sum_(numer))


def dma(query: Tensor, bank: TokenBank, mask: DocMask) -> Tensor:
    """Differentiable masked attention: soft document weights inside the softmax.

    Any constant mask cancels between numerator and denominator, so a uniform
    mask reproduces plain attention; a near-one-hot mask approaches the hard
    variant.  Gradients flow into query, keys, and mask.
    """
    if not isinstance(mask, DocMask) or mask.kind != "soft":
        raise ValueError("dma requires a soft DocMask")
    e = _stabilized_exp(_token_scores(query, bank))
    token_mask = _expand_mask(mask.values, bank)
    numer = ad.mul(e, token_mask)
    return ad.divide(numer, ad.sum_(numer))


def attend(probs: Tensor, bank: TokenBank) -> Tensor:
    """Context vector sum_t probs[t] * V[t].

    Implemented as an elementwise product followed by an order-independent
    column sum rather than a matmul, so the result is invariant bit-for-bit
    under joint document permutations.
    """
    probs = ad.as_tensor(probs)
    if probs.data.ndim != 1 or probs.size != bank.n_tokens:
        raise ShapeError(f"probs shape {probs.shape} does not match {bank.n_tokens} tokens")
    d = bank.values.shape[1]
    p_col = ad.reshape(probs, (bank.n_tokens, 1))
    tiled = ad.matmul(p_col, ad.constant(np.ones((1, d))))
    return ad.sum_(ad.mul(tiled, bank.values), axis=0)

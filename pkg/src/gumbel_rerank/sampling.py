"""Stochastic top-k document selection via Gumbel perturbation.

Core mechanism: perturb reranker scores with Gumbel noise, soften the argmax
with a temperature-tau softmax, repeat k times, and combine the k relaxed
one-hot draws with an elementwise max.  The result is a soft document mask in
(0, 1]^n that is differentiable in the scores (noise is treated as a constant,
i.e. the reparameterization gradient).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

TAU_FLOOR = 1e-4
# Uniform draws are clamped away from {0, 1}: the double log is undefined at
# the boundary and the clamp is measure-zero.
UNIFORM_CLAMP = 1e-12

__all__ = [
    "TAU_FLOOR",
    "GumbelParams",
    "RelaxedMask",
    "gumbel_noise",
    "perturb",
    "relaxed_onehot",
    "relaxed_topk",
    "relaxed_topk_with_noise",
    "selection_probability",
    "hard_topk",
]


@dataclass(frozen=True)
class GumbelParams:
    """Sampling hyperparameters: temperature tau, score scale kappa, subset size k.

    tau below TAU_FLOOR is clamped up to it; colder softmaxes are numerically
    one-hot and pass no gradient.
    """

    tau: float = 0.5
    kappa: float = 1.0
    k: int = 5

    def __post_init__(self):
        if not np.isfinite(self.tau) or self.tau <= 0:
            raise ValueError(f"tau must be positive and finite, got {self.tau}")
        if self.tau < TAU_FLOOR:
            object.__setattr__(self, "tau", TAU_FLOOR)
        if self.kappa < 0 or not np.isfinite(self.kappa):
            raise ValueError(f"kappa must be nonnegative and finite, got {self.kappa}")
        if int(self.k) != self.k or self.k < 1:
            raise ValueError(f"k must be a positive integer, got {self.k}")
        object.__setattr__(self, "k", int(self.k))


@dataclass
class RelaxedMask:
    """Soft document mask from relaxed top-k sampling.

    mask holds the elementwise max of the k softmax draws (each draw is kept
    for tests and diagnostics).  Entries lie in (0, 1]; the mask dominates
    every draw pointwise by construction.
    """

    mask: Tensor
    params: GumbelParams
    draws: list[Tensor] = field(default_factory=list)

    @property
    def values(self) -> np.ndarray:
        return self.mask.data


def gumbel_noise(n: int, rng: np.random.Generator) -> np.ndarray:
    """n standard Gumbel(0, 1) draws: -log(-log(u)), u ~ U(0,1) clamped."""
    u = np.clip(rng.random(n), UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP)
    return -np.log(-np.log(u))


def perturb(w: Tensor, noise: np.ndarray, kappa: float) -> Tensor:
    """Noisy scores g + kappa * w; gradient w.r.t. w is kappa * I."""
    w = ad.as_tensor(w)
    noise = np.asarray(noise, dtype=np.float64)
    if w.shape != noise.shape:
        raise ad.ShapeError(f"perturb: scores {w.shape} vs noise {noise.shape}")
    return ad.add(ad.mul(ad.constant(kappa), w), ad.constant(noise))


def relaxed_onehot(w_tilde: Tensor, tau: float) -> Tensor:
    """softmax(w_tilde / tau); approaches a one-hot at the argmax as tau -> 0."""
    tau = max(float(tau), TAU_FLOOR)
    return ad.softmax(ad.divide(ad.as_tensor(w_tilde), ad.constant(tau)), axis=-1)


def relaxed_topk_with_noise(w: Tensor, params: GumbelParams, noises) -> RelaxedMask:
    """Deterministic core of relaxed_topk with caller-supplied noise draws.

    Exposing the noise lets finite-difference tests replay the exact same
    perturbation while varying the scores.
    """
    w = ad.as_tensor(w)
    n = w.size
    if not 1 <= params.k <= n:
        raise ValueError(f"k={params.k} out of range for {n} documents")
    noises = list(noises)
    if len(noises) != params.k:
        raise ValueError(f"expected {params.k} noise vectors, got {len(noises)}")
    draws = [relaxed_onehot(perturb(w, g, params.kappa), params.tau) for g in noises]
    mask = draws[0] if params.k == 1 else ad.max_elementwise(*draws)
    return RelaxedMask(mask=mask, params=params, draws=draws)


def relaxed_topk(w: Tensor, params: GumbelParams, rng: np.random.Generator) -> RelaxedMask:
    """k independent Gumbel-softmax draws combined by elementwise max.

    Draws may collide on the same document, so fewer than k entries can be
    near one; this mirrors sampling with replacement rather than without.
    """
    w = ad.as_tensor(w)
    noises = [gumbel_noise(w.size, rng) for _ in range(params.k)]
    return relaxed_topk_with_noise(w, params, noises)


def selection_probability(w, kappa: float) -> np.ndarray:
    """softmax(kappa * w): the exact distribution of a single perturbed argmax.

    Serves as the analytic oracle for distributional tests of relaxed_topk
    (the Gumbel-max trick makes argmax(g + kappa*w) ~ softmax(kappa*w)).
    """
    w = w.data if isinstance(w, Tensor) else np.asarray(w, dtype=np.float64)
    z = kappa * w
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


def hard_topk(w, k: int) -> list[int]:
    """Indices of the k largest scores, ties to the lowest index, sorted ascending."""
    w = w.data if isinstance(w, Tensor) else np.asarray(w, dtype=np.float64)
    n = w.size
    if not 1 <= k <= n:
        raise ValueError(f"k={k} out of range for {n} documents")
    order = np.argsort(-w, kind="stable")  # stable: equal scores keep index order
    return sorted(int(i) for i in order[:k])

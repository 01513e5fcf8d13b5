"""Training loop, optimizer, evaluation settings, and sweep/ablation runners.

One loop serves all six methods (the end-to-end masked-attention loss, the
four distillation baselines, and direct per-document weight learning).  The
reader is pretrained once on full candidate sets, then frozen: a checksum
taken before training must match the one after.  Every run is a pure function
of (data seed, noise seed, init seed).
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import autodiff as ad
from .attention import DocMask
from .autodiff import Tensor
from .datagen import Episode
from .metrics import mrr, ndcg_at_k, ranking_from_scores, recall_at_k
from .objectives import (
    DocLikelihoods,
    adist_loss,
    adist_stats,
    compute_doc_likelihoods,
    emdr_loss,
    grerank_loss,
    loop_loss,
    pdist_loss,
    reranker_distribution,
)
from .reader import ReaderConfig, ReaderParams, generate, language_loss, prefill
from .sampling import GumbelParams, RelaxedMask, hard_topk
from .scorer import FreeWeights, MlpScorer, ScorerConfig, free_weights_mask, score_all

__all__ = [
    "METHODS",
    "AdamState",
    "adam_step",
    "NonFiniteGradientError",
    "TrainingDiverged",
    "TrainConfig",
    "RunRecord",
    "TrainResult",
    "pretrain_reader",
    "train",
    "evaluate",
    "ablate_gumbel",
    "sweep",
    "SWEEP_TAUS",
    "SWEEP_KAPPAS",
]

METHODS = ("grerank", "adist", "emdr", "pdist", "loop", "freeweights")

# Hyperparameter grids exercised by the sweep runner.
SWEEP_TAUS = (0.1, 0.5, 1.0, 2.0)
SWEEP_KAPPAS = (0.1, 0.5, 1.0, 2.0, 5.0)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NonFiniteGradientError(RuntimeError):
    """A gradient turned NaN/inf; aborting beats silently corrupting params."""


class TrainingDiverged(RuntimeError):
    """Loss blew past the divergence threshold; carries the records so far."""

    def __init__(self, message: str, records: list):
        super().__init__(message)
        self.records = records


class AdamState:
    def __init__(self, params: list[Tensor]):
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState,
              lr: float) -> AdamState:
    """One bias-corrected Adam update, in place."""
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(
                f"non-finite gradient in parameter {i} (shape {g.shape}) at step {state.t + 1}")
    state.t += 1
    t = state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m[...] = ADAM_BETA1 * m + (1 - ADAM_BETA1) * g
        v[...] = ADAM_BETA2 * v + (1 - ADAM_BETA2) * g * g
        m_hat = m / (1 - ADAM_BETA1 ** t)
        v_hat = v / (1 - ADAM_BETA2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
    return state


@dataclass
class TrainConfig:
    method: str = "grerank"
    tau: float = 0.5
    kappa: float = 1.0
    k: int = 5
    learning_rate: float = 1e-3
    steps: int = 2000
    batch_size: int = 4
    eval_interval: int = 200
    eval_k: int = 5
    seed_data: int = 0
    seed_noise: int = 1
    seed_init: int = 2
    gumbel_noise: bool = True
    scorer_embed_dim: int = 16
    scorer_hidden: int = 32
    scorer_final_scale: float = 0.0
    freeweights_episode: int = 0
    divergence_threshold: float = 1e3

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; choose from {METHODS}")
        for name in ("steps", "batch_size", "eval_interval", "k", "eval_k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def gumbel_params(self) -> GumbelParams:
        return GumbelParams(tau=self.tau, kappa=self.kappa, k=self.k)


@dataclass
class RunRecord:
    step: int
    loss: float
    max_mask_weight: float | None = None
    mining_recall: float | None = None
    mining_ndcg: float | None = None
    mining_mrr: float | None = None
    reranker_recall: float | None = None
    reranker_ndcg: float | None = None
    reranker_mrr: float | None = None
    exact_match: float | None = None
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    records: list[RunRecord]
    # Per-step (step, max normalized mask weight, mask entropy); only mask
    # methods (grerank, freeweights) populate it.
    trajectory: list[tuple[int, float, float]]
    model: object
    summary: dict = field(default_factory=dict)


def _mask_stats(mask_values: np.ndarray) -> tuple[float, float]:
    # Mask entries are softmax-derived document weights in (0, 1]; the
    # headline trajectory statistic is their maximum.  (For the no-noise
    # softmax mask this coincides with the max of a distribution over
    # documents, whose uniform value is 1/n.)  Entropy is reported over the
    # sum-normalized mask.
    p = mask_values / mask_values.sum()
    return float(mask_values.max()), float(-(p * np.log(p)).sum())


def _episode_stream(n_episodes: int, rng: np.random.Generator):
    """Yield episode indices forever, reshuffling each epoch."""
    while True:
        for i in rng.permutation(n_episodes):
            yield int(i)


class _TargetCache:
    """Frozen-reader quantities fixed per episode: banks, likelihoods, attention."""

    def __init__(self, params: ReaderParams):
        self.params = params
        self.banks: dict[int, object] = {}
        self.likelihoods: dict[tuple[int, bool], DocLikelihoods] = {}
        self.attn: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def bank(self, idx: int, episode: Episode):
        if idx not in self.banks:
            self.banks[idx] = prefill(episode.docs, self.params)
        return self.banks[idx]

    def likelihood(self, idx: int, episode: Episode, loo: bool) -> DocLikelihoods:
        key = (idx, loo)
        if key not in self.likelihoods:
            self.likelihoods[key] = compute_doc_likelihoods(
                episode, self.params, bank=self.bank(idx, episode), include_loo=loo)
        return self.likelihoods[key]

    def attention_stats(self, idx: int, episode: Episode):
        if idx not in self.attn:
            self.attn[idx] = adist_stats(episode, self.params, bank=self.bank(idx, episode))
        return self.attn[idx]


def pretrain_reader(episodes: list[Episode], config: ReaderConfig, steps: int = 16000,
                    lr: float = 1e-3, batch_size: int = 4, seed: int = 0,
                    warmup_frac: float = 0.12) -> ReaderParams:
    """Supervised teacher-forced training, then freeze.

    Two-stage curriculum: a short warmup on gold-only hard masks lets the
    value-to-logit copy path form (with full candidate sets from scratch the
    model stalls at the answer-marginal plateau), then the bulk of training
    runs on the full candidate set so unmasked attention becomes the reader's
    native operating point.  The learning rate anneals twice near the end to
    sharpen attention; a sharply-reading frozen reader is what the mask-based
    experiments assume.
    """
    params = ReaderParams(config, trainable=True)
    state = AdamState(params.tensors())
    rng = np.random.default_rng(seed)
    stream = _episode_stream(len(episodes), rng)
    warmup = int(steps * warmup_frac)
    for step in range(1, steps + 1):
        step_lr = lr if step <= 0.6 * steps else (lr * 0.3 if step <= 0.85 * steps else lr * 0.1)
        losses = []
        for _ in range(batch_size):
            ep = episodes[next(stream)]
            bank = prefill(ep.docs, params)
            if step <= warmup:
                mask_values = np.zeros(ep.n_docs)
                mask_values[list(ep.gold)] = 1.0
            else:
                mask_values = np.ones(ep.n_docs)
            losses.append(language_loss(ep.query, ep.answer, bank,
                                        DocMask.hard(mask_values), params))
        batch_loss = ad.divide(ad.sum_(ad.concat([ad.reshape(l, (1,)) for l in losses])),
                               ad.constant(float(len(losses))))
        for p in params.tensors():
            p.zero_grad()
        ad.backward(batch_loss)
        adam_step(params.tensors(), [p.grad for p in params.tensors()], state, step_lr)
    params.set_trainable(False)
    return params


def _method_loss(config: TrainConfig, model, episode: Episode, idx: int,
                 cache: _TargetCache, noise_rng: np.random.Generator):
    """Per-episode loss; returns (loss tensor, mask values or None)."""
    method = config.method
    if method in ("grerank", "freeweights"):
        if method == "grerank":
            loss, relaxed = grerank_loss(
                model, episode, cache.params, config.gumbel_params(), noise_rng,
                bank=cache.bank(idx, episode), gumbel_noise=config.gumbel_noise)
        else:
            if config.gumbel_noise:
                relaxed = free_weights_mask(model, config.gumbel_params(), noise_rng)
            else:
                soft = ad.softmax(ad.divide(ad.mul(ad.constant(config.kappa), model.weights),
                                            ad.constant(config.tau)), axis=-1)
                relaxed = RelaxedMask(mask=soft, params=config.gumbel_params(), draws=[])
            loss = language_loss(episode.query, episode.answer, cache.bank(idx, episode),
                                 DocMask.soft(relaxed.mask), cache.params)
        return loss, relaxed.values
    p_r = reranker_distribution(score_all(model, episode))
    if method == "adist":
        alpha, vnorms = cache.attention_stats(idx, episode)
        return adist_loss(p_r, alpha, vnorms), None
    if method == "emdr":
        return emdr_loss(p_r, cache.likelihood(idx, episode, loo=False)), None
    if method == "pdist":
        return pdist_loss(p_r, cache.likelihood(idx, episode, loo=False)), None
    if method == "loop":
        return loop_loss(p_r, cache.likelihood(idx, episode, loo=True)), None
    raise ValueError(f"unknown method {method!r}")


def train(config: TrainConfig, train_episodes: list[Episode],
          eval_episodes: list[Episode], reader: ReaderParams) -> TrainResult:
    """Run one training trial; fully determined by the three seeds.

    Returns per-interval records, the per-step mask trajectory, and the
    trained model (MlpScorer, or FreeWeights for the reranker-free method).
    """
    if not train_episodes:
        raise ValueError("empty training corpus")
    reader.set_trainable(False)
    reader_checksum = reader.checksum()
    vocab_size = reader.config.vocab_size

    if config.method == "freeweights":
        episode = train_episodes[config.freeweights_episode]
        model: object = FreeWeights(episode.n_docs, config.freeweights_episode)
        params_list = [model.weights]
    else:
        model = MlpScorer(ScorerConfig(
            vocab_size=vocab_size, embed_dim=config.scorer_embed_dim,
            hidden=config.scorer_hidden, seed=config.seed_init,
            final_scale=config.scorer_final_scale))
        params_list = model.tensors()

    cache = _TargetCache(reader)
    state = AdamState(params_list)
    data_rng = np.random.default_rng(config.seed_data)
    noise_rng = np.random.default_rng(config.seed_noise)
    stream = _episode_stream(len(train_episodes), data_rng)

    records: list[RunRecord] = []
    trajectory: list[tuple[int, float, float]] = []
    start = time.time()

    def evaluate_now(step: int, loss_value: float, max_w: float | None) -> None:
        rec = RunRecord(step=step, loss=loss_value, max_mask_weight=max_w,
                        wall_clock=time.time() - start)
        if config.method == "freeweights":
            m = evaluate("mining", model, [train_episodes[config.freeweights_episode]],
                         reader, config.eval_k)
            rec.mining_recall, rec.mining_ndcg, rec.mining_mrr = (
                m["recall"], m["ndcg"], m["mrr"])
        else:
            m = evaluate("mining", model, train_episodes, reader, config.eval_k)
            rec.mining_recall, rec.mining_ndcg, rec.mining_mrr = (
                m["recall"], m["ndcg"], m["mrr"])
            if eval_episodes:
                r = evaluate("reranker", model, eval_episodes, reader, config.eval_k)
                rec.reranker_recall, rec.reranker_ndcg, rec.reranker_mrr = (
                    r["recall"], r["ndcg"], r["mrr"])
                g = evaluate("generator", model, eval_episodes, reader, config.eval_k)
                rec.exact_match = g["exact_match"]
        records.append(rec)

    for step in range(1, config.steps + 1):
        losses, stats = [], []
        batch = 1 if config.method == "freeweights" else config.batch_size
        for _ in range(batch):
            if config.method == "freeweights":
                idx = config.freeweights_episode
                ep = train_episodes[idx]
            else:
                idx = next(stream)
                ep = train_episodes[idx]
            loss, mask_values = _method_loss(config, model, ep, idx, cache, noise_rng)
            losses.append(loss)
            if mask_values is not None:
                stats.append(_mask_stats(mask_values))
        batch_loss = ad.divide(ad.sum_(ad.concat([ad.reshape(l, (1,)) for l in losses])),
                               ad.constant(float(len(losses))))
        loss_value = batch_loss.item()
        if not np.isfinite(loss_value) or loss_value > config.divergence_threshold:
            raise TrainingDiverged(
                f"loss {loss_value} exceeded {config.divergence_threshold} at step {step}",
                records)
        max_w = float(np.mean([s[0] for s in stats])) if stats else None
        if stats:
            trajectory.append((step, max_w, float(np.mean([s[1] for s in stats]))))
        for p in params_list:
            p.zero_grad()
        ad.backward(batch_loss)
        adam_step(params_list, [p.grad for p in params_list], state, config.learning_rate)
        if step % config.eval_interval == 0 or step == config.steps:
            evaluate_now(step, loss_value, max_w)

    if reader.checksum() != reader_checksum:
        raise RuntimeError("reader parameters changed during scorer training")

    evaluated = [r for r in records if r.mining_recall is not None]
    best = max(evaluated, key=lambda r: r.mining_recall) if evaluated else None
    result = TrainResult(records=records, trajectory=trajectory, model=model)
    result.summary = {
        "final": records[-1].to_dict() if records else None,
        "best_mining": best.to_dict() if best else None,
    }
    return result


def _scores_for(model, episode: Episode) -> np.ndarray:
    if isinstance(model, FreeWeights):
        if episode.n_docs != model.n_docs:
            raise ValueError("free weights are bound to a single fixed episode")
        return model.weights.data.copy()
    if callable(model) and not isinstance(model, MlpScorer):
        return np.asarray(model(episode), dtype=np.float64)  # oracle hooks in tests
    return score_all(model, episode).data.copy()


def evaluate(setting: str, model, episodes: list[Episode], reader: ReaderParams,
             k: int, target: str = "gold") -> dict:
    """Metric record for one evaluation setting.

    mining and reranker rank candidates by the learned scores (they differ
    only in which split the caller passes); generator measures exact match of
    greedy decoding over the hard top-k documents.  target selects which
    label set (gold or indirect-only) counts as relevant.
    """
    if setting not in ("mining", "reranker", "generator"):
        raise ValueError(f"unknown setting {setting!r}")
    if not episodes:
        raise ValueError("no episodes to evaluate")
    if target not in ("gold", "indirect"):
        raise ValueError(f"unknown target {target!r}")

    if setting == "generator":
        cache = _TargetCache(reader)
        hits = []
        for idx, ep in enumerate(episodes):
            if k > ep.n_docs:
                raise ValueError(f"k={k} exceeds {ep.n_docs} candidates")
            picked = hard_topk(_scores_for(model, ep), k)
            mask = DocMask.hard_from_indices(picked, ep.n_docs)
            out = generate(ep.query, cache.bank(idx, ep), mask, reader,
                           max_len=len(ep.answer))
            hits.append(1.0 if out == list(ep.answer) else 0.0)
        return {"setting": setting, "k": k, "exact_match": float(np.mean(hits))}

    recalls, ndcgs, mrrs = [], [], []
    for ep in episodes:
        if k > ep.n_docs:
            raise ValueError(f"k={k} exceeds {ep.n_docs} candidates")
        relevant = ep.gold if target == "gold" else ep.indirect
        if not relevant:
            continue
        ranking = ranking_from_scores(_scores_for(model, ep))
        recalls.append(recall_at_k(ranking, relevant, k))
        ndcgs.append(ndcg_at_k(ranking, relevant, k))
        mrrs.append(mrr(ranking, relevant))
    if not recalls:
        raise ValueError(f"no episode has a nonempty {target!r} label set")
    return {"setting": setting, "k": k, "recall": float(np.mean(recalls)),
            "ndcg": float(np.mean(ndcgs)), "mrr": float(np.mean(mrrs))}


def ablate_gumbel(config: TrainConfig, train_episodes, eval_episodes,
                  reader: ReaderParams) -> tuple[TrainResult, TrainResult]:
    """Paired runs differing only in the noise term of the sampled mask."""
    with_noise = train(replace(config, gumbel_noise=True),
                       train_episodes, eval_episodes, reader)
    without_noise = train(replace(config, gumbel_noise=False),
                          train_episodes, eval_episodes, reader)
    return with_noise, without_noise


def _sweep_cell(args):
    config, train_eps, eval_eps, reader = args
    result = train(config, train_eps, eval_eps, reader)
    return {"tau": config.tau, "kappa": config.kappa, "seed_noise": config.seed_noise,
            "trajectory": result.trajectory}


def sweep(config: TrainConfig, train_episodes, eval_episodes, reader: ReaderParams,
          taus=SWEEP_TAUS, kappas=SWEEP_KAPPAS, noise_seeds=(1,), workers: int = 1) -> list[dict]:
    """Grid of training runs over (tau, kappa) with shared data/init seeds.

    Emits one mask-weight trajectory per cell and noise seed; cells are
    independent and may run in parallel processes.
    """
    cells = []
    for tau in taus:
        for kappa in kappas:
            for seed in noise_seeds:
                cells.append((replace(config, tau=tau, kappa=kappa, seed_noise=seed),
                              train_episodes, eval_episodes, reader))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_sweep_cell, cells))
    return [_sweep_cell(c) for c in cells]

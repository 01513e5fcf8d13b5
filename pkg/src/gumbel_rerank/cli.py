"""Command-line entry point.

Subcommands map one-to-one onto the experiment families:

  gen            write train/eval corpora for the configured task
  pretrain       supervised reader training on the train split, then freeze
  train          train a scorer (or free weights) against the frozen reader
  eval           metric report for a saved scorer on all three settings
  ablate-gumbel  paired runs with and without the mask noise term
  sweep          (tau, kappa) grid of runs, one trajectory file per cell

Every command logs its fully resolved config into the output directory before
doing any work, never mutates its inputs, and is idempotent given identical
config and seeds.  Failures exit nonzero with one ``error: <Type>: <message>``
line on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig
from .datagen import Vocabulary, gen_multihop, gen_single_hop, read_corpus, write_corpus
from .reader import ReaderConfig, load_reader, save_reader
from .scorer import FreeWeights, load_scorer, save_scorer
from .training import (
    TrainConfig,
    ablate_gumbel,
    evaluate,
    pretrain_reader,
    sweep,
    train,
)

__all__ = ["main"]


def _train_config(cfg: ExperimentConfig) -> TrainConfig:
    return TrainConfig(
        method=cfg.method, tau=cfg.tau, kappa=cfg.kappa, k=cfg.k,
        learning_rate=cfg.learning_rate, steps=cfg.steps, batch_size=cfg.batch_size,
        eval_interval=cfg.eval_interval, eval_k=cfg.eval_k,
        seed_data=cfg.seed_data, seed_noise=cfg.seed_noise, seed_init=cfg.seed_init,
        gumbel_noise=cfg.gumbel_noise, scorer_embed_dim=cfg.scorer_embed_dim,
        scorer_hidden=cfg.scorer_hidden, scorer_final_scale=cfg.scorer_final_scale,
        freeweights_episode=cfg.freeweights_episode,
        divergence_threshold=cfg.divergence_threshold,
    )


def _reader_config(cfg: ExperimentConfig) -> ReaderConfig:
    return ReaderConfig(
        vocab_size=cfg.vocab_size, embed_dim=cfg.reader_embed_dim,
        max_doc_len=cfg.max_doc_len, max_answer_len=cfg.max_answer_len,
        seed=cfg.reader_seed, n_hops=cfg.reader_hops,
    )


def _episode(cfg: ExperimentConfig, vocab: Vocabulary, seed: int):
    if cfg.task == "single_hop":
        return gen_single_hop(seed, cfg.n_docs, vocab)
    if cfg.task == "multi_hop":
        return gen_multihop(seed, cfg.n_docs, cfg.chain_len, vocab, n_decoys=cfg.n_decoys)
    raise ConfigError(f"unknown task {cfg.task!r}")


def _path(cfg_value: str, out: Path) -> Path:
    p = Path(cfg_value)
    return p if p.is_absolute() else out / p


def _log_config(cfg: ExperimentConfig, out: Path, command: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{command}_config.txt").write_text(cfg.resolved_text(), encoding="utf-8")


def _write_trajectory(path: Path, trajectory) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,max_weight,entropy\n")
        for step, max_w, ent in trajectory:
            fh.write(f"{step},{max_w:.10g},{ent:.10g}\n")


def _write_records(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict()) + "\n")


def cmd_gen(cfg: ExperimentConfig, out: Path, quiet: bool) -> None:
    vocab = Vocabulary(cfg.vocab_size)
    base = cfg.corpus_seed * 1_000_000
    train_eps = [_episode(cfg, vocab, base + i) for i in range(cfg.train_episodes)]
    eval_eps = [_episode(cfg, vocab, base + 500_000 + i) for i in range(cfg.eval_episodes)]
    write_corpus(train_eps, _path(cfg.train_corpus, out))
    write_corpus(eval_eps, _path(cfg.eval_corpus, out))
    if not quiet:
        print(f"wrote {len(train_eps)} train / {len(eval_eps)} eval episodes to {out}")


def cmd_pretrain(cfg: ExperimentConfig, out: Path, quiet: bool) -> None:
    episodes = read_corpus(_path(cfg.train_corpus, out))
    params = pretrain_reader(episodes, _reader_config(cfg), steps=cfg.pretrain_steps,
                             lr=cfg.pretrain_lr, batch_size=cfg.pretrain_batch,
                             seed=cfg.reader_seed)
    save_reader(_path(cfg.reader_params, out), params)
    if not quiet:
        print(f"pretrained reader over {cfg.pretrain_steps} steps -> {cfg.reader_params}")


def cmd_train(cfg: ExperimentConfig, out: Path, quiet: bool) -> None:
    train_eps = read_corpus(_path(cfg.train_corpus, out))
    eval_eps = read_corpus(_path(cfg.eval_corpus, out))
    reader = load_reader(_path(cfg.reader_params, out))
    result = train(_train_config(cfg), train_eps, eval_eps, reader)
    _write_records(out / "records.jsonl", result.records)
    if result.trajectory:
        _write_trajectory(out / "trajectory.csv", result.trajectory)
    if isinstance(result.model, FreeWeights):
        (out / "weights.json").write_text(json.dumps({
            "episode_index": result.model.episode_index,
            "weights": result.model.weights.data.tolist(),
        }), encoding="utf-8")
    else:
        save_scorer(_path(cfg.scorer_params, out), result.model)
    (out / "summary.json").write_text(json.dumps(result.summary, indent=2), encoding="utf-8")
    if not quiet and result.records:
        print(f"trained {cfg.method} for {cfg.steps} steps; "
              f"final loss {result.records[-1].loss:.4f}")


def cmd_eval(cfg: ExperimentConfig, out: Path, quiet: bool) -> None:
    train_eps = read_corpus(_path(cfg.train_corpus, out))
    eval_eps = read_corpus(_path(cfg.eval_corpus, out))
    reader = load_reader(_path(cfg.reader_params, out))
    scorer = load_scorer(_path(cfg.scorer_params, out))
    metrics = {
        "mining": evaluate("mining", scorer, train_eps, reader, cfg.eval_k),
        "reranker": evaluate("reranker", scorer, eval_eps, reader, cfg.eval_k),
        "generator": evaluate("generator", scorer, eval_eps, reader, cfg.eval_k),
    }
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2), encoding="utf-8")
    if not quiet:
        print(json.dumps(metrics))


def cmd_ablate_gumbel(cfg: ExperimentConfig, out: Path, quiet: bool) -> None:
    train_eps = read_corpus(_path(cfg.train_corpus, out))
    eval_eps = read_corpus(_path(cfg.eval_corpus, out))
    reader = load_reader(_path(cfg.reader_params, out))
    with_noise, without_noise = ablate_gumbel(_train_config(cfg), train_eps, eval_eps, reader)
    _write_trajectory(out / "trajectory_with_noise.csv", with_noise.trajectory)
    _write_trajectory(out / "trajectory_without_noise.csv", without_noise.trajectory)
    terminal = {
        "with_noise": with_noise.trajectory[-1][1],
        "without_noise": without_noise.trajectory[-1][1],
    }
    (out / "ablation.json").write_text(json.dumps(terminal, indent=2), encoding="utf-8")
    if not quiet:
        print(json.dumps(terminal))


def cmd_sweep(cfg: ExperimentConfig, out: Path, quiet: bool) -> None:
    train_eps = read_corpus(_path(cfg.train_corpus, out))
    eval_eps = read_corpus(_path(cfg.eval_corpus, out))
    reader = load_reader(_path(cfg.reader_params, out))
    cells = sweep(_train_config(cfg), train_eps, eval_eps, reader,
                  taus=cfg.sweep_taus, kappas=cfg.sweep_kappas,
                  noise_seeds=cfg.sweep_noise_seeds, workers=cfg.sweep_workers)
    index = []
    for cell in cells:
        name = f"sweep_tau{cell['tau']}_kappa{cell['kappa']}_seed{cell['seed_noise']}.csv"
        _write_trajectory(out / name, cell["trajectory"])
        index.append({"tau": cell["tau"], "kappa": cell["kappa"],
                      "seed_noise": cell["seed_noise"], "file": name})
    (out / "sweep_index.json").write_text(json.dumps(index, indent=2), encoding="utf-8")
    if not quiet:
        print(f"swept {len(cells)} cells -> {out}")


_COMMANDS = {
    "gen": cmd_gen,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate-gumbel": cmd_ablate_gumbel,
    "sweep": cmd_sweep,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gumbel-rerank",
        description="Differentiable top-k reranker training experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment config file")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=None,
                       help="override data/noise/init/corpus seeds from N")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = ExperimentConfig.load(args.config)
        if args.seed is not None:
            cfg.values.update(seed_data=args.seed, seed_noise=args.seed + 1,
                              seed_init=args.seed + 2, corpus_seed=args.seed + 3)
        out = Path(args.out)
        _log_config(cfg, out, args.command.replace("-", "_"))
        _COMMANDS[args.command](cfg, out, args.quiet)
    except Exception as exc:  # one-line machine-readable failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Flat key=value experiment configuration.

One file drives generation, pretraining, training, evaluation, ablation, and
sweeps.  Lines are ``key = value`` with ``#`` comments; every key has a
documented default and unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["ConfigError", "ExperimentConfig", "SCHEMA"]


class ConfigError(ValueError):
    """Bad config file: unknown key, bad value, or unreadable line."""


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {s!r}")


def _int_list(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _float_list(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


# key -> (parser, default, help)
SCHEMA: dict[str, tuple] = {
    # Synthetic task
    "task": (str, "single_hop", "single_hop or multi_hop"),
    "vocab_size": (int, 64, "token vocabulary size (>= 64)"),
    "n_docs": (int, 20, "candidate documents per episode"),
    "chain_len": (int, 2, "evidence chain length (multi_hop)"),
    "n_decoys": (int, 3, "decoy chains per episode (multi_hop)"),
    "train_episodes": (int, 200, "training split size"),
    "eval_episodes": (int, 500, "held-out split size"),
    "corpus_seed": (int, 11, "seed for episode generation"),
    # Reader
    "reader_embed_dim": (int, 32, "reader embedding width (even)"),
    "reader_hops": (int, 2, "chained cross-attention hops in the decoder"),
    "reader_seed": (int, 7, "reader parameter init seed"),
    "max_doc_len": (int, 8, "maximum document length in tokens"),
    "max_answer_len": (int, 2, "maximum answer length in tokens"),
    "pretrain_steps": (int, 3000, "reader pretraining steps"),
    "pretrain_lr": (float, 3e-3, "reader pretraining learning rate"),
    "pretrain_batch": (int, 4, "reader pretraining batch size"),
    # Scorer training
    "method": (str, "grerank", "grerank|adist|emdr|pdist|loop|freeweights"),
    "tau": (float, 0.5, "softmax temperature of the sampled mask"),
    "kappa": (float, 1.0, "score scale inside the perturbation"),
    "k": (int, 5, "subset size of the relaxed top-k mask"),
    "learning_rate": (float, 1e-3, "Adam learning rate for the scorer"),
    "steps": (int, 2000, "training steps"),
    "batch_size": (int, 4, "episodes per training step"),
    "eval_interval": (int, 200, "steps between metric records"),
    "eval_k": (int, 5, "cutoff for recall/NDCG during evaluation"),
    "seed_data": (int, 0, "episode-order seed"),
    "seed_noise": (int, 1, "mask sampling seed"),
    "seed_init": (int, 2, "scorer init seed"),
    "gumbel_noise": (_bool, True, "include the noise term in the sampled mask"),
    "scorer_embed_dim": (int, 16, "scorer embedding width"),
    "scorer_hidden": (int, 32, "scorer hidden layer width"),
    "scorer_final_scale": (float, 0.0, "std-dev of scorer output layer init (0 = zeros)"),
    "freeweights_episode": (int, 0, "episode index for the reranker-free method"),
    "divergence_threshold": (float, 1000.0, "abort when the loss exceeds this"),
    # Sweep / ablation
    "sweep_taus": (_float_list, (0.1, 0.5, 1.0, 2.0), "tau grid"),
    "sweep_kappas": (_float_list, (0.1, 0.5, 1.0, 2.0, 5.0), "kappa grid"),
    "sweep_noise_seeds": (_int_list, (1, 2, 3, 4, 5), "noise seeds per sweep cell"),
    "sweep_workers": (int, 1, "parallel worker processes for sweep cells"),
    # File names (resolved inside the output directory unless absolute)
    "train_corpus": (str, "train.jsonl", "training split file"),
    "eval_corpus": (str, "eval.jsonl", "held-out split file"),
    "reader_params": (str, "reader.bin", "reader parameter file"),
    "scorer_params": (str, "scorer.bin", "scorer parameter file"),
}


@dataclass
class ExperimentConfig:
    values: dict

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    @classmethod
    def defaults(cls) -> "ExperimentConfig":
        return cls(values={k: default for k, (_, default, _) in SCHEMA.items()})

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        cfg = cls.defaults()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in SCHEMA:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            parser = SCHEMA[key][0]
            try:
                cfg.values[key] = parser(value)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def resolved_text(self) -> str:
        """Every key with its effective value, sorted, ready to log."""
        lines = []
        for key in sorted(SCHEMA):
            v = self.values[key]
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{key} = {v}")
        return "\n".join(lines) + "\n"

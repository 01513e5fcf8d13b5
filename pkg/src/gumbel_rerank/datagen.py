"""Deterministic synthetic retrieval episodes with known evidence labels.

Documents are token-level triples ``head SEP relation SEP object`` over a
small vocabulary split into reserved ids, entities, relations, and answers.
Two generators:

* single-hop: the query names an (entity, relation) pair; exactly one gold
  document completes it with the answer, the rest are distractor triples.
* multi-hop: a relation chain is split across chain_len gold documents; only
  the last one contains the answer token, the earlier bridge documents are
  indirectly relevant.  Decoy chains reuse the same relations with fresh
  entities, so a bridge document and its matched decoy have identical length
  and token-class profile and are equally (un)informative about the answer
  in isolation.

The gold documents are always present among the candidates (distraction
setting); episodes are pure functions of (seed, parameters).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Vocabulary",
    "Episode",
    "CorpusError",
    "gen_single_hop",
    "gen_multihop",
    "write_corpus",
    "read_corpus",
    "follow_chain",
    "isolated_likelihood_oracle",
]

PAD = 0
SEP = 1


class CorpusError(ValueError):
    """Malformed corpus file; message carries the 1-based line number."""


@dataclass(frozen=True)
class Vocabulary:
    """Token-id layout: PAD, SEP, then entity / relation / answer ranges."""

    size: int = 64

    def __post_init__(self):
        if self.size < 64:
            raise ValueError("vocabulary size must be at least 64")

    @property
    def n_entities(self) -> int:
        return (self.size - 2) // 2

    @property
    def n_relations(self) -> int:
        return (self.size - 2) // 4

    @property
    def n_answers(self) -> int:
        return self.size - 2 - self.n_entities - self.n_relations

    @property
    def entities(self) -> range:
        return range(2, 2 + self.n_entities)

    @property
    def relations(self) -> range:
        start = 2 + self.n_entities
        return range(start, start + self.n_relations)

    @property
    def answers(self) -> range:
        start = 2 + self.n_entities + self.n_relations
        return range(start, self.size)

    def token_class(self, tok: int) -> str:
        if tok == PAD:
            return "pad"
        if tok == SEP:
            return "sep"
        if tok in self.entities:
            return "entity"
        if tok in self.relations:
            return "relation"
        if tok in self.answers:
            return "answer"
        raise ValueError(f"token {tok} outside vocabulary of size {self.size}")


@dataclass
class Episode:
    """One retrieval episode with evaluation-only relevance labels.

    gold lists every evidence document; indirect is the subset of gold whose
    documents contain no answer token.
    """

    query: list[int]
    docs: list[list[int]]
    answer: list[int]
    gold: tuple[int, ...] = field(default_factory=tuple)
    indirect: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.gold = tuple(sorted(int(i) for i in self.gold))
        self.indirect = tuple(sorted(int(i) for i in self.indirect))
        n = len(self.docs)
        if not self.gold:
            raise ValueError("episode must have at least one gold document")
        if any(not 0 <= i < n for i in self.gold):
            raise ValueError(f"gold indices {self.gold} out of range for {n} documents")
        if not set(self.indirect) <= set(self.gold):
            raise ValueError("indirect documents must be a subset of gold")
        answer_tokens = set(self.answer)
        for i in self.indirect:
            if answer_tokens & set(self.docs[i]):
                raise ValueError(f"indirect document {i} contains an answer token")

    @property
    def n_docs(self) -> int:
        return len(self.docs)

    @property
    def direct(self) -> tuple[int, ...]:
        return tuple(i for i in self.gold if i not in self.indirect)


def _shuffle_docs(rng, docs, gold_flags, indirect_flags):
    order = rng.permutation(len(docs))
    shuffled = [docs[i] for i in order]
    gold = tuple(int(p) for p, i in enumerate(order) if gold_flags[i])
    indirect = tuple(int(p) for p, i in enumerate(order) if indirect_flags[i])
    return shuffled, gold, indirect


def gen_single_hop(seed: int, n: int, vocab: Vocabulary,
                   query_entities: int = 8, query_relations: int = 4) -> Episode:
    """Query (e, r); one gold triple (e, r, a) among n-1 distractor triples.

    The query's entity and relation come from small leading pools so the same
    query recurs across episodes with different answers: a reader cannot
    memorize query -> answer and must consult the documents.  Distractor
    triples draw from the full vocabulary.
    """
    if n < 2:
        raise ValueError("single-hop episodes need at least 2 documents")
    query_entities = min(query_entities, vocab.n_entities)
    query_relations = min(query_relations, vocab.n_relations)
    n_pairs = vocab.n_entities * vocab.n_relations
    if n_pairs < n + 1:
        raise ValueError(f"vocabulary supports only {n_pairs} distinct (entity, relation) pairs")
    rng = np.random.default_rng(seed)
    e = int(vocab.entities[rng.integers(query_entities)])
    r = int(vocab.relations[rng.integers(query_relations)])
    gold_code = (e - vocab.entities[0]) * vocab.n_relations + (r - vocab.relations[0])
    codes = [c for c in rng.choice(n_pairs, size=n + 1, replace=False) if c != gold_code][:n - 1]
    answer = int(rng.choice(list(vocab.answers)))
    other_answers = [a for a in vocab.answers if a != answer]
    docs = [[e, SEP, r, SEP, answer]]
    for c in codes:
        e_i = int(vocab.entities[c // vocab.n_relations])
        r_i = int(vocab.relations[c % vocab.n_relations])
        docs.append([e_i, SEP, r_i, SEP, int(rng.choice(other_answers))])
    gold_flags = [True] + [False] * (n - 1)
    shuffled, gold, indirect = _shuffle_docs(rng, docs, gold_flags, [False] * n)
    return Episode(query=[e, SEP, r], docs=shuffled, answer=[answer],
                   gold=gold, indirect=indirect)


def gen_multihop(seed: int, n: int, chain_len: int, vocab: Vocabulary,
                 n_decoys: int = 3, query_entities: int = 8,
                 query_relations: int = 4) -> Episode:
    """A chain_len-document evidence chain plus matched decoy chains.

    The query carries the start entity and the relation path; like the
    single-hop generator, both draw from small pools so queries collide across
    episodes while the chain itself (intermediate entities, answer) is
    episode-random.  Decoy chains reuse the relation path with disjoint
    entities and a different answer, so isolated-document inspection cannot
    tell a bridge from its decoy; the remaining slots are entity-object
    triples over relations outside the path.
    """
    if chain_len < 2:
        raise ValueError("multi-hop episodes need chain_len >= 2")
    if n < chain_len + 1:
        raise ValueError("need at least one distractor beyond the chain")
    n_decoys = min(n_decoys, (n - chain_len) // chain_len)
    if n_decoys < 1:
        raise ValueError(f"no room for a decoy chain with n={n}, chain_len={chain_len}")
    n_chains = 1 + n_decoys
    if n_chains * chain_len > vocab.n_entities:
        raise ValueError("vocabulary has too few entities for the chain structure")
    query_relations = min(max(query_relations, chain_len), vocab.n_relations - 1)
    if chain_len > query_relations:
        raise ValueError("vocabulary has too few relations for the chain")
    if n_chains > vocab.n_answers:
        raise ValueError("vocabulary has too few answers for the decoy chains")
    rng = np.random.default_rng(seed)

    start = int(vocab.entities[rng.integers(min(query_entities, vocab.n_entities))])
    others = [e for e in vocab.entities if e != start]
    ents = rng.choice(others, size=n_chains * chain_len - 1, replace=False)
    chains = np.concatenate([[start], ents]).reshape(n_chains, chain_len)
    rels = rng.choice(list(vocab.relations)[:query_relations], size=chain_len, replace=False)
    answers = rng.choice(list(vocab.answers), size=n_chains, replace=False)

    docs, gold_flags, indirect_flags = [], [], []
    for c in range(n_chains):
        ch = [int(x) for x in chains[c]]
        for j in range(chain_len):
            head = ch[j]
            obj = ch[j + 1] if j + 1 < chain_len else int(answers[c])
            docs.append([head, SEP, int(rels[j]), SEP, obj])
            gold_flags.append(c == 0)
            indirect_flags.append(c == 0 and j + 1 < chain_len)

    spare_rels = [r for r in vocab.relations if r not in set(int(x) for x in rels)]
    used = set()
    while len(docs) < n:
        head = int(rng.choice(list(vocab.entities)))
        rel = int(rng.choice(spare_rels))
        if (head, rel) in used:
            continue
        used.add((head, rel))
        obj = int(rng.choice(list(vocab.entities)))
        docs.append([head, SEP, rel, SEP, obj])
        gold_flags.append(False)
        indirect_flags.append(False)

    query = [int(chains[0][0])]
    for r in rels:
        query += [SEP, int(r)]
    shuffled, gold, indirect = _shuffle_docs(rng, docs, gold_flags, indirect_flags)
    return Episode(query=query, docs=shuffled, answer=[int(answers[0])],
                   gold=gold, indirect=indirect)


def follow_chain(episode: Episode) -> int | None:
    """Brute-force chase: resolve the query's relation path across the documents.

    Returns the unique answer token, or None if any hop is missing/ambiguous.
    """
    cur = episode.query[0]
    rels = episode.query[2::2]
    for r in rels:
        matches = [doc[4] for doc in episode.docs
                   if len(doc) == 5 and doc[0] == cur and doc[2] == r]
        if len(matches) != 1:
            return None
        cur = matches[0]
    return cur


def isolated_likelihood_oracle(episode: Episode, vocab: Vocabulary) -> np.ndarray:
    """Idealized per-document log p(answer | query, doc) under the generator.

    A document that contains the answer pins it down (log-prob 0); any other
    single document leaves the answer uniform over the answer range.  Bridge
    documents and their matched decoys therefore receive bit-identical values,
    which is the construction the distillation targets are blind to.
    """
    uninformative = -float(np.log(vocab.n_answers))
    out = np.full(episode.n_docs, uninformative)
    answer_tokens = set(episode.answer)
    for i, doc in enumerate(episode.docs):
        if answer_tokens <= set(doc) and i in episode.gold:
            out[i] = 0.0
    return out


_FIELDS = ("query", "docs", "answer", "gold", "indirect")


def write_corpus(episodes, path) -> None:
    """One JSON object per line, fixed field order, UTF-8."""
    with open(path, "w", encoding="utf-8") as fh:
        for ep in episodes:
            rec = {
                "query": list(ep.query),
                "docs": [list(d) for d in ep.docs],
                "answer": list(ep.answer),
                "gold": list(ep.gold),
                "indirect": list(ep.indirect),
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_corpus(path) -> list[Episode]:
    episodes = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(rec, dict) or set(rec) != set(_FIELDS):
                raise CorpusError(f"line {lineno}: expected fields {sorted(_FIELDS)}")
            try:
                episodes.append(Episode(
                    query=[int(t) for t in rec["query"]],
                    docs=[[int(t) for t in d] for d in rec["docs"]],
                    answer=[int(t) for t in rec["answer"]],
                    gold=tuple(rec["gold"]),
                    indirect=tuple(rec["indirect"]),
                ))
            except (TypeError, ValueError) as exc:
                raise CorpusError(f"line {lineno}: {exc}") from exc
    return episodes

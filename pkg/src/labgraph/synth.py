"""Reproducible clinical-like corpora with planted code-keyword signal."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import CodeGraph, uniform_tree


class SynthSpecError(ValueError):
    pass


@dataclass
class SynthSpec:
    seed: int = 7
    n_train: int = 500
    n_dev: int = 100
    n_test: int = 100
    vocab_size: int = 400
    doc_len: tuple[int, int] = (40, 80)
    branching: tuple[int, ...] = (4, 3, 2)
    keywords_per_code: int = 3
    noise: float = 0.2
    zipf_s: float = 1.0
    sibling_rate: float = 0.3
    n_exclusions: int = 2

    def validate(self):
        if min(self.branching) < 2:
            raise SynthSpecError("branching factors must be >= 2")
        if not 0.0 <= self.noise < 1.0:
            raise SynthSpecError("noise rate must lie in [0, 1)")
        if self.doc_len[0] < 1 or self.doc_len[0] > self.doc_len[1]:
            raise SynthSpecError("bad document length range")


@dataclass
class Document:
    id: str
    tokens: list[str]
    codes: list[str]
    split: str = "train"

    def to_json(self):
        return json.dumps({"id": self.id, "text": " ".join(self.tokens), "codes": self.codes,
                           "split": self.split})


@dataclass
class Corpus:
    documents: list[Document]
    graph: CodeGraph
    keywords: dict[str, list[str]] = field(default_factory=dict)

    def split(self, name):
        return [d for d in self.documents if d.split == name]

    @property
    def splits(self):
        out = {}
        for i, d in enumerate(self.documents):
            out.setdefault(d.split, []).append(i)
        return out

    def write(self, corpus_path, graph_path):
        Path(corpus_path).write_text("".join(d.to_json() + "\n" for d in self.documents), encoding="utf-8")
        self.graph.save(graph_path)


def exclusion_planting(spec: SynthSpec, graph: CodeGraph | None = None):
    """Pick sibling leaf pairs that never co-occur in a gold set."""
    graph = graph or uniform_tree(spec.branching)
    rng = np.random.default_rng([spec.seed, 2])
    pairs = [(a, b) for a, b in graph.sibling_edges() if graph.is_leaf(a) and graph.is_leaf(b)]
    if spec.n_exclusions <= 0 or not pairs:
        return []
    chosen = rng.choice(len(pairs), size=min(spec.n_exclusions, len(pairs)), replace=False)
    return [(graph.code_of(pairs[i][0]), graph.code_of(pairs[i][1])) for i in sorted(chosen)]


def generate(spec: SynthSpec) -> Corpus:
    spec.validate()
    base = uniform_tree(spec.branching)
    exclusions = exclusion_planting(spec, base)
    graph = CodeGraph({n.code: base.code_of(base.parent[n.id]) for n in base.nodes[1:]}, exclusions)

    codes = [n.code for n in graph.nodes[1:]]
    n_kw = len(codes) * spec.keywords_per_code
    if spec.vocab_size < n_kw + 10:
        raise SynthSpecError(f"vocab_size {spec.vocab_size} too small for {n_kw} keywords plus filler")
    meta = np.random.default_rng([spec.seed, 0])
    vocab = [f"w{i:04d}" for i in range(spec.vocab_size)]
    perm = meta.permutation(spec.vocab_size)
    keywords = {c: [vocab[j] for j in perm[i * spec.keywords_per_code:(i + 1) * spec.keywords_per_code]]
                for i, c in enumerate(codes)}
    filler = [vocab[j] for j in perm[n_kw:]]

    leaves = graph.leaves()
    ranks = meta.permutation(len(leaves)) + 1
    weights = ranks.astype(float) ** -spec.zipf_s
    weights /= weights.sum()

    docs = []
    n_total = spec.n_train + spec.n_dev + spec.n_test
    for i in range(n_total):
        rng = np.random.default_rng([spec.seed, 1, i])
        primary = leaves[rng.choice(len(leaves), p=weights)]
        gold_leaves = [primary]
        if rng.random() < spec.sibling_rate:
            options = [s for s in graph.siblings(primary)
                       if graph.is_leaf(s) and not graph.excluded(primary, s)]
            if options:
                gold_leaves.append(options[rng.integers(len(options))])
        gold = sorted({a for leaf in gold_leaves for a in graph.ancestors(leaf)[1:]})

        length = int(rng.integers(spec.doc_len[0], spec.doc_len[1] + 1))
        tokens = [filler[j] for j in rng.integers(len(filler), size=length)]
        planted = [kw for node in gold for kw in keywords[graph.code_of(node)]
                   if rng.random() >= spec.noise]
        if rng.random() < spec.noise:
            others = [c for c in range(1, len(graph)) if c not in gold]
            pick = others[rng.integers(len(others))]
            kws = keywords[graph.code_of(pick)]
            planted.append(kws[rng.integers(len(kws))])
        for kw in planted:
            tokens.insert(int(rng.integers(len(tokens) + 1)), kw)
        split = "train" if i < spec.n_train else "dev" if i < spec.n_train + spec.n_dev else "test"
        docs.append(Document(f"doc{i:05d}", tokens, [graph.code_of(c) for c in gold], split))
    return Corpus(docs, graph, keywords)


def load_corpus(path) -> list[Document]:
    docs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                docs.append(Document(str(rec["id"]), rec["text"].split(), list(rec.get("codes", [])),
                                     rec.get("split", "train")))
            except (json.JSONDecodeError, KeyError, AttributeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed corpus record ({exc})") from None
    return docs


def keyword_baseline(docs, keywords) -> list[set[str]]:
    """Predict every code having at least one of its keywords in the text."""
    out = []
    for d in docs:
        toks = set(d.tokens)
        out.append({c for c, kws in keywords.items() if toks.intersection(kws)})
    return out

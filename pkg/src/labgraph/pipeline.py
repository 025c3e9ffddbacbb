"""Data loading, the alternating training loop, evaluation and prediction."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import optim
from . import tensor as T
from .adversarial import aat_loss, binary_dist
from .checkpoint import Checkpoint, CheckpointError
from .config import ConfigError
from .discriminator import batch_rewards
from .encoder import UNK
from .generator import RunningBaseline, StepBatch, generate, reinforce_loss, teacher_episodes
from .graph import CodeGraph, UnknownCodeError, neighbors
from .metrics import PredictionRecord, report, set_f1, top_k
from .model import LabGraphModel
from .synth import Document, load_corpus
from .tensor import NumericError

log = logging.getLogger("labgraph")


class DataError(ValueError):
    pass


# ---------------------------------------------------------------- data

@dataclass
class Dataset:
    graph: CodeGraph
    docs: list[Document]
    vocab: dict[str, int]
    ids: list[np.ndarray]
    gold: list[set[int]]
    splits: dict[str, list[int]] = field(default_factory=dict)

    def subset(self, split):
        if split not in self.splits:
            raise DataError(f"corpus has no {split!r} split")
        return self.splits[split]


def build_vocab(docs):
    tokens = sorted({t for d in docs if d.split == "train" for t in d.tokens})
    return {t: i + 2 for i, t in enumerate(tokens)}


def token_ids(vocab, tokens):
    return np.array([vocab.get(t, UNK) for t in tokens], dtype=np.int64)


def make_dataset(graph, docs, vocab=None):
    vocab = vocab or build_vocab(docs)
    gold, splits = [], {}
    for i, d in enumerate(docs):
        if not d.tokens:
            raise DataError(f"document {d.id} is empty")
        try:
            gold.append({graph.id_of(c) for c in d.codes})
        except UnknownCodeError as exc:
            raise DataError(f"document {d.id}: {exc}") from None
        splits.setdefault(d.split, []).append(i)
    return Dataset(graph, docs, vocab, [token_ids(vocab, d.tokens) for d in docs], gold, splits)


def load_dataset(cfg, vocab=None):
    try:
        graph = CodeGraph.load(cfg.data.graph)
        docs = load_corpus(cfg.data.corpus)
    except OSError as exc:
        raise DataError(f"cannot read data: {exc}") from None
    except ValueError as exc:
        raise DataError(str(exc)) from None
    return make_dataset(graph, docs, vocab)


def write_vocab(vocab, path):
    Path(path).write_text("".join(f"{t}\n" for t, _ in sorted(vocab.items(), key=lambda kv: kv[1])),
                          encoding="utf-8")


def read_vocab(path):
    words = Path(path).read_text(encoding="utf-8").split("\n")
    return {w: i + 2 for i, w in enumerate(w for w in words if w)}


# ---------------------------------------------------------------- rollout helpers

def random_path(g, rng, siblings=True, max_len=None):
    """Uniform random walk under the rollout rules; a negative for the discriminator."""
    max_len = max_len or 2 * g.depth
    path = [g.root]
    while len(path) <= max_len:
        options = neighbors(g, path[-1], (), set(path), siblings) + [path[-1]]
        a = options[int(rng.integers(len(options)))]
        if a in path:
            break
        path.append(a)
        if g.is_leaf(a):
            break
    return path[1:] or [g.children[g.root][int(rng.integers(len(g.children[g.root])))]]


def sample_prefix(path, rng, prob):
    if len(path) > 1 and rng.random() < prob:
        return path[:int(rng.integers(1, len(path) + 1))]
    return path


def label_scores(ctx, g, doc):
    """Probability that a children-only top-down descent reaches each node."""
    reach = np.zeros(len(g))
    reach[g.root] = 1.0
    for u in range(len(g)):  # ids follow BFS order, so parents come first
        kids = g.children[u]
        if not kids:
            continue
        path = g.ancestors(u)
        p = ctx.distribution(doc, path, kids)
        reach[kids] = reach[u] * p[:-1]
    return reach


# ---------------------------------------------------------------- training

@dataclass
class RoundStats:
    round: int
    gen_loss: float
    disc_loss: float
    mean_return: float
    dev_micro_f1: float
    dev_macro_f1: float

    def to_tsv(self):
        return (f"{self.round}\t{self.gen_loss:.6f}\t{self.disc_loss:.6f}\t{self.mean_return:.6f}\t"
                f"{self.dev_micro_f1:.6f}\t{self.dev_macro_f1:.6f}")


HISTORY_HEADER = "round\tgen_loss\tdisc_loss\tmean_return\tdev_micro_f1\tdev_macro_f1"


class Trainer:
    def __init__(self, cfg, data: Dataset):
        cfg.aat.validate()
        self.cfg, self.data = cfg, data
        self.g = data.graph
        self.model = LabGraphModel(cfg, data.graph, len(data.vocab) + 2)
        self.rng = np.random.default_rng([cfg.train.seed, 21])
        self.gen_opt = optim.make(cfg.train.optimizer, cfg.generator.lr)
        self.disc_opt = optim.make(cfg.train.optimizer, cfg.discriminator.lr)
        self.baseline = RunningBaseline(cfg.generator.baseline_momentum)
        self.history: list[RoundStats] = []

    # -- pieces

    def _zero(self):
        for p in self.model.named_parameters().values():
            p.grad = None

    def _logp(self, codes, x):
        """log-prob function that also records a logit penalty for the current batch."""
        def fn(items):
            sb = StepBatch(items, len(self.g))
            logp, z = self.model.policy.log_probs(codes, x, sb, with_logits=True)
            # sigmoid-normalised scores stop learning once logits saturate
            self._penalty = T.tsum(z * z * sb.mask) * (self.cfg.generator.logit_l2 / len(items))
            return logp
        return fn

    def _teacher_items(self, idx):
        sib = self.cfg.generator.siblings
        return [(j, s) for j, i in enumerate(idx)
                for ep in teacher_episodes(self.g, self.data.gold[i], sib) for s in ep.steps]

    def _teacher_loss(self, codes, x, idx):
        logp = self._logp(codes, x)(self._teacher_items(idx))
        return -T.tsum(logp) * (1.0 / len(idx)) + self._penalty

    def _assign_rewards(self, idx, trajs, x_np, c_np):
        cfg = self.cfg.generator
        prefixes, where = [], []
        for j, (_, episodes) in enumerate(trajs):
            for ep in episodes:
                ep.rewards = [0.0] * len(ep.steps)
                if cfg.step_weight:
                    for t, s in enumerate(ep.steps):
                        if not s.is_stop:
                            prefixes.append(list(s.path[1:]) + [s.action])
                            where.append((j, ep, t))
        d = batch_rewards(self.model.disc, prefixes, [w[0] for w in where], x_np, c_np)
        for (j, ep, t), v in zip(where, d):
            ep.rewards[t] += cfg.step_weight * (float(v) - 0.5)
        for j, (_, episodes) in enumerate(trajs):
            gold, cum = self.data.gold[idx[j]], set()
            for ep in episodes:
                new = cum | ep.labels
                ep.rewards[-1] += cfg.terminal_weight * (set_f1(new, gold) - set_f1(cum, gold))
                cum = new

    def generator_step(self, idx, batch):
        cfg = self.cfg
        self._zero()
        enc = self.model.encoder
        codes = self.model.codes()
        diag = {"mean_return": 0.0}
        gen_aat = cfg.train.aat and cfg.aat.target in ("generator", "both")
        trajs = None
        if cfg.train.arcl:
            x = enc.encode(batch)
            ctx = self.model.policy.context(codes.data, x.data, cfg.generator.siblings)
            trajs = [(j, generate(ctx, j, self.g, "sample", self.rng, cfg.generator.budget)[0])
                     for j in range(len(idx))]
            self._assign_rewards(idx, trajs, x.data, codes.data)
            loss, owner, diag = reinforce_loss(trajs, self._logp(codes, x), self.baseline)
            loss = loss + self._penalty
            bad = ~np.isfinite(diag["logp"]) | ~np.isfinite(diag["adv"])
            if bad.any():
                raise NumericError(f"non-finite policy gradient in episode {int(owner[bad][0])}")
            if cfg.generator.mle_weight:
                loss = loss + self._teacher_loss(codes, x, idx) * cfg.generator.mle_weight
            if gen_aat:
                loss = loss + self._generator_aat(codes, batch, idx)
        elif gen_aat:
            loss = self._generator_aat(codes, batch, idx)
        else:
            loss = self._teacher_loss(codes, enc.encode(batch), idx)
        if not np.isfinite(loss.data):
            raise NumericError("generator loss is not finite")
        loss.backward()
        params = self.model.generator_parameters()
        self._check_grads(params, "generator")
        self.gen_opt.step(params)
        return float(loss.data), diag["mean_return"], trajs

    def _generator_aat(self, codes, batch, idx):
        enc = self.model.encoder
        items = self._teacher_items(idx)
        sb = StepBatch(items, len(self.g))

        def forward(e):
            x = enc.encode_embedded(e, batch)
            logp, z = self.model.policy.log_probs(codes, x, sb, with_logits=True)
            penalty = T.tsum(z * z * sb.mask) * (self.cfg.generator.logit_l2 / len(sb))
            return -T.tsum(logp) * (1.0 / len(idx)) + penalty, binary_dist(T.exp(logp))

        total, _ = aat_loss(forward, enc.embed(batch), self.cfg.aat, batch.token_mask[:, :, None], (1, 2))
        return total

    def discriminator_step(self, idx, batch, trajs):
        cfg = self.cfg
        dcfg = cfg.discriminator
        self._zero()
        sib = cfg.generator.siblings
        pos, neg = [], []
        for j, i in enumerate(idx):
            gold = self.data.gold[i]
            for ep in teacher_episodes(self.g, gold, sib):
                if len(ep.path) < 2:
                    continue
                pos.append((j, sample_prefix(ep.path[1:], self.rng, dcfg.prefix_prob)))
                if self.rng.random() < dcfg.random_walk_frac or trajs is None:
                    cand = random_path(self.g, self.rng, sib)
                else:
                    eps = [e for e in trajs[j][1] if len(e.path) > 1]
                    cand = eps[int(self.rng.integers(len(eps)))].path[1:] if eps else random_path(self.g, self.rng, sib)
                # paths that stay inside the gold set are authentic, not negatives
                if set(cand) <= gold:
                    cand = random_path(self.g, self.rng, sib)
                    if set(cand) <= gold:
                        continue
                neg.append((j, sample_prefix(cand, self.rng, dcfg.prefix_prob)))
        samples = pos + neg
        labels = [1] * len(pos) + [0] * len(neg)
        paths = [p for _, p in samples]
        rows = np.array([j for j, _ in samples])
        code_table = T.Tensor(self.model.codes().data)
        enc, disc = self.model.encoder, self.model.disc

        def forward(e):
            x = enc.encode_embedded(e, batch)
            loss, z = disc.loss(paths, labels, T.take_rows(x, rows), code_table)
            return loss, binary_dist(T.sigmoid(z))

        if cfg.train.aat and cfg.aat.target in ("discriminator", "both"):
            loss, _ = aat_loss(forward, enc.embed(batch), cfg.aat, batch.token_mask[:, :, None], (1, 2))
        else:
            loss, _ = forward(enc.embed(batch))
        if not np.isfinite(loss.data):
            raise NumericError("discriminator loss is not finite")
        loss.backward()
        params = self.model.discriminator_parameters()
        self._check_grads(params, "discriminator")
        self.disc_opt.step(params)
        return float(loss.data)

    @staticmethod
    def _check_grads(params, who):
        for name, p in params.items():
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise NumericError(f"non-finite {who} gradient in {name}")

    # -- loop

    def run_round(self, rnd):
        cfg = self.cfg
        train = self.data.subset("train")
        order = [train[k] for k in self.rng.permutation(len(train))]
        bs = cfg.train.batch_size
        g_losses, d_losses, returns = [], [], []
        for start in range(0, len(order), bs):
            idx = order[start:start + bs]
            batch = self.model.encoder.batch([self.data.ids[i] for i in idx])
            gl, ret, trajs = self.generator_step(idx, batch)
            g_losses.append(gl)
            returns.append(ret)
            if cfg.train.arcl:
                for _ in range(cfg.discriminator.epochs):
                    d_losses.append(self.discriminator_step(idx, batch, trajs))
        dev = self.data.splits.get("dev")
        macro = micro = float("nan")
        if dev:
            recs = predict_records(self.model, self.data, dev)
            rep = report(recs, config_hash=cfg.hash())
            macro, micro = rep.macro_f1, rep.micro_f1
        stats = RoundStats(rnd, float(np.mean(g_losses)), float(np.mean(d_losses)) if d_losses else 0.0,
                           float(np.mean(returns)), micro, macro)
        self.history.append(stats)
        return stats

    def fit(self, rounds=None, out=None):
        rounds = self.cfg.train.rounds if rounds is None else rounds
        for rnd in range(1, rounds + 1):
            t0 = time.perf_counter()
            good = self.model.state_dict()
            try:
                s = self.run_round(rnd)
            except NumericError:
                self.model.load_state_dict(good)
                if out is not None:
                    self.save(out)
                    log.error("training diverged in round %d; kept the round %d checkpoint", rnd, rnd - 1)
                raise
            log.info("round %d  gen %.4f  disc %.4f  return %.4f  dev micro-F1 %.4f  (%.1fs)",
                     rnd, s.gen_loss, s.disc_loss, s.mean_return, s.dev_micro_f1, time.perf_counter() - t0)
        if out is not None:
            self.save(out)
        return self.history

    def best_dev(self):
        return max((s.dev_micro_f1 for s in self.history), default=float("nan"))

    def save(self, out):
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        self.model.checkpoint(len(self.history)).save(out / "model.lgck")
        write_vocab(self.data.vocab, out / "vocab.txt")
        saved = self.cfg.copy()
        for attr in ("corpus", "graph", "out"):
            setattr(saved.data, attr, str(Path(getattr(saved.data, attr)).resolve()))
        (out / "config.ini").write_text(saved.to_text(), encoding="utf-8")
        (out / "history.tsv").write_text(
            HISTORY_HEADER + "\n" + "".join(s.to_tsv() + "\n" for s in self.history), encoding="utf-8")


def train(cfg, data=None, out=None):
    data = data or load_dataset(cfg)
    trainer = Trainer(cfg, data)
    trainer.fit(out=out)
    return trainer


# ---------------------------------------------------------------- inference

def predict_records(model, data, idx, chunk=100, paths=None):
    """Greedy multi-rollout predictions and per-label scores for documents ``idx``.

    When ``paths`` is a list, the generated node paths of each document are appended to it.
    """
    g = data.graph
    use_disc = model.cfg.train.arcl
    records = []
    with T.no_grad():
        codes = model.codes().data
        for start in range(0, len(idx), chunk):
            part = idx[start:start + chunk]
            x = model.encoder.encode(model.encoder.batch([data.ids[i] for i in part])).data
            ctx = model.policy.context(codes, x, model.cfg.generator.siblings)
            if use_disc:
                nodes = list(range(1, len(g)))
                chains = [g.ancestors(a)[1:] for a in nodes]
                d = batch_rewards(model.disc, chains * len(part), np.repeat(np.arange(len(part)), len(nodes)),
                                  x, codes).reshape(len(part), len(nodes))
            for j, i in enumerate(part):
                episodes, predicted = generate(ctx, j, g, "greedy", budget=model.cfg.generator.budget)
                if paths is not None:
                    paths.append([ep.path for ep in episodes if len(ep.path) > 1])
                scores = label_scores(ctx, g, j)[1:]
                if use_disc:
                    scores = scores * d[j]
                records.append(PredictionRecord(data.docs[i].id, scores, {n - 1 for n in predicted},
                                                {n - 1 for n in data.gold[i]}))
    return records


def load_model(cfg, out):
    out = Path(out)
    try:
        ck = Checkpoint.load(out / "model.lgck")
        vocab = read_vocab(out / "vocab.txt")
    except (OSError, CheckpointError) as exc:
        raise DataError(f"cannot read trained model from {out}: {exc}") from None
    if ck.config_hash != cfg.hash():
        log.warning("checkpoint config hash %s differs from current config %s", ck.config_hash, cfg.hash())
    return ck, vocab


def restore(cfg, ck, graph, vocab):
    model = LabGraphModel(cfg, graph, len(vocab) + 2)
    try:
        model.load_state_dict(ck.tensors)
    except (KeyError, ValueError) as exc:
        raise DataError(f"checkpoint does not match this label space or config: {exc}") from None
    return model


def evaluate(cfg, out, split="dev", data=None):
    ck, vocab = load_model(cfg, out)
    data = data or load_dataset(cfg, vocab)
    model = restore(cfg, ck, data.graph, vocab)
    recs = predict_records(model, data, data.subset(split))
    return report(recs, config_hash=ck.config_hash)


def predict_texts(cfg, out, texts, k=5):
    """Predict codes for raw texts with a trained model; returns JSON-ready dicts."""
    ck, vocab = load_model(cfg, out)
    try:
        graph = CodeGraph.load(cfg.data.graph)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read graph: {exc}") from None
    docs = [Document(f"input{i}", t.split(), [], "predict") for i, t in enumerate(texts)]
    data = make_dataset(graph, docs, vocab)
    model = restore(cfg, ck, graph, vocab)
    paths = []
    recs = predict_records(model, data, list(range(len(docs))), paths=paths)
    out_rows = []
    for r, ps in zip(recs, paths):
        out_rows.append({"id": r.doc_id,
                         "paths": [[graph.code_of(n) for n in p] for p in ps],
                         "codes": sorted(graph.code_of(n + 1) for n in r.predicted),
                         "top": [[graph.code_of(int(n) + 1), round(float(r.scores[n]), 6)]
                                 for n in top_k(r.scores, min(k, len(r.scores)))]})
    return out_rows



# ---------------------------------------------------------------- sweep

SWEEP_PARAMS = {"epsilon": "aat.epsilon", "residual_blocks": "encoder.residual_blocks"}
SWEEP_HEADER = "value\tbest_dev_micro_f1\tfinal_dev_micro_f1\tfinal_dev_macro_f1"


@dataclass
class SweepRow:
    value: float
    best_micro: float
    final_micro: float
    final_macro: float

    def to_tsv(self):
        return f"{self.value:g}\t{self.best_micro:.6f}\t{self.final_micro:.6f}\t{self.final_macro:.6f}"


def _sweep_one(cfg, data):
    tr = Trainer(cfg, data)
    tr.fit()
    last = tr.history[-1] if tr.history else None
    nan = float("nan")
    return tr.best_dev(), last.dev_micro_f1 if last else nan, last.dev_macro_f1 if last else nan


def sweep(cfg, param, values, data=None, workers=1):
    """Retrain once per value (same seed) and tabulate dev scores."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"cannot sweep {param!r}; choose from {sorted(SWEEP_PARAMS)}")
    configs = []
    for v in values:
        c = cfg.copy()
        c.set(SWEEP_PARAMS[param], v)
        try:
            c.aat.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if c.encoder.residual_blocks < 0:
            raise ConfigError("encoder.residual_blocks must be >= 0")
        configs.append(c)
    if not configs:
        return []
    data = data or load_dataset(cfg)
    if workers > 1 and len(configs) > 1:
        with ProcessPoolExecutor(min(workers, len(configs))) as pool:
            scores = list(pool.map(_sweep_one, configs, [data] * len(configs)))
    else:
        scores = [_sweep_one(c, data) for c in configs]
    return [SweepRow(float(v), *s) for v, s in zip(values, scores)]

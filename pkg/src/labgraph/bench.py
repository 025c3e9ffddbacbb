"""Search-space and memory benchmark: hierarchical path generation vs a flat |C|-way scorer."""
from __future__ import annotations

import time
import tracemalloc
from dataclasses import dataclass, field

import numpy as np

from .generator import Policy, rollout
from .graph import CodeGraph, uniform_tree


@dataclass
class ModeStats:
    mode: str
    evaluations: float  # mean candidate scores per document
    max_evaluations: int
    path_len: float
    bound: float  # mean of L * k_step per document
    within_bound: bool
    seconds_per_doc: float


@dataclass
class BenchReport:
    n_codes: int
    k_max: int
    depth: int
    modes: list[ModeStats]
    flat_evaluations: int
    flat_seconds_per_doc: float
    memory: list[tuple[int, int]] = field(default_factory=list)  # (|V|+|E|, bytes)
    memory_r2: float = float("nan")

    def ratio(self, mode="children"):
        m = next(m for m in self.modes if m.mode == mode)
        return self.flat_evaluations / m.max_evaluations

    def to_text(self):
        lines = [f"codes\t{self.n_codes}", f"k_max\t{self.k_max}", f"depth\t{self.depth}",
                 f"flat_evaluations\t{self.flat_evaluations}",
                 f"flat_seconds_per_doc\t{self.flat_seconds_per_doc:.6f}"]
        for m in self.modes:
            lines += [f"{m.mode}.evaluations_mean\t{m.evaluations:.2f}",
                      f"{m.mode}.evaluations_max\t{m.max_evaluations}",
                      f"{m.mode}.path_len_mean\t{m.path_len:.2f}",
                      f"{m.mode}.within_L_k_bound\t{int(m.within_bound)}",
                      f"{m.mode}.seconds_per_doc\t{m.seconds_per_doc:.6f}",
                      f"{m.mode}.reduction\t{self.flat_evaluations / m.max_evaluations:.2f}"]
        for size, nbytes in self.memory:
            lines.append(f"memory_bytes[{size}]\t{nbytes}")
        if self.memory:
            lines.append(f"memory_r2\t{self.memory_r2:.5f}")
        return "\n".join(lines) + "\n"


def _policy(g, rng, dim):
    pol = Policy(len(g), dim, dim, rng)
    # stop disabled so every rollout descends all the way (the longest case)
    pol.params["policy.stop_b"].data[:] = -50.0
    codes = rng.normal(size=(len(g), dim))
    return pol, codes


def measure_mode(g, n_docs, rng, siblings, dim=8):
    pol, codes = _policy(g, rng, dim)
    docs = rng.normal(size=(n_docs, dim))
    k_step = max(len(g.children[u]) + (len(g.siblings(u)) if siblings else 0) for u in range(len(g)))
    counts, lengths, ok = [], [], True
    t0 = time.perf_counter()
    for d in range(n_docs):
        ctx = pol.context(codes, docs, siblings)
        ep = rollout(ctx, d, g, "sample", rng)
        counts.append(ctx.evaluations)
        lengths.append(len(ep.steps))
        ok &= ctx.evaluations <= len(ep.steps) * k_step
    dt = (time.perf_counter() - t0) / n_docs
    mode = "children+siblings" if siblings else "children"
    return ModeStats(mode, float(np.mean(counts)), int(max(counts)), float(np.mean(lengths)),
                     float(np.mean(lengths)) * k_step, bool(ok), dt)


def measure_flat(g, n_docs, rng, dim=8):
    pol, codes = _policy(g, rng, dim)
    docs = rng.normal(size=(n_docs, dim))
    leaves = g.leaves()
    ctx = pol.context(codes, docs)
    t0 = time.perf_counter()
    per_doc = []
    for d in range(n_docs):
        before = ctx.evaluations
        ctx.distribution(d, [g.root], leaves)
        per_doc.append(ctx.evaluations - before)
    dt = (time.perf_counter() - t0) / n_docs
    if len(set(per_doc)) != 1:
        raise AssertionError("flat scorer evaluated a varying number of codes")
    return per_doc[0], dt


def graph_memory(branching):
    """Bytes retained by a CodeGraph built from a prepared edge list."""
    src = uniform_tree(branching)
    parent_of = {n.code: src.code_of(src.parent[n.id]) for n in src.nodes[1:]}
    tracemalloc.start()
    try:
        g = CodeGraph(parent_of)
        current, _ = tracemalloc.get_traced_memory()
    finally:
        tracemalloc.stop()
    return len(g) + g.n_edges, current


def linear_r2(xs, ys):
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    slope, icpt = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + icpt)
    return 1.0 - float((resid ** 2).sum() / ((ys - ys.mean()) ** 2).sum())


MEMORY_SIZES = ((10, 10), (10, 10, 10), (10, 10, 10, 10))


def bench(branching=(10, 10, 10), n_docs=20, seed=0, memory=True) -> BenchReport:
    g = uniform_tree(branching)
    rng = np.random.default_rng(seed)
    modes = [measure_mode(g, n_docs, rng, siblings=False), measure_mode(g, n_docs, rng, siblings=True)]
    flat, flat_dt = measure_flat(g, n_docs, rng)
    if flat != len(g.leaves()):
        raise AssertionError(f"flat scorer evaluated {flat} codes, expected {len(g.leaves())}")
    rep = BenchReport(len(g.leaves()), g.max_branching, g.depth, modes, flat, flat_dt)
    if memory:
        rep.memory = [graph_memory(b) for b in MEMORY_SIZES]
        rep.memory_r2 = linear_r2(*zip(*rep.memory))
    return rep

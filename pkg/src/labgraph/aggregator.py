"""Relation-aware code embeddings: attentive one-hop messages fused with multi-hop context."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from . import tensor as T
from .encoder import uniform, zeros
from .graph import CodeGraph

# relation of neighbour v as seen from u
CHILD, PARENT, SIBLING, EXCLUSION = range(4)
RELATIONS = ("child", "parent", "sibling", "exclusion")


@dataclass
class AggregatorConfig:
    hops: int = 2
    gate: str = "scalar"  # scalar | vector
    gate_bias: float = 2.0


def one_hop_table(g: CodeGraph, include=RELATIONS):
    """Padded (neighbour, relation) table per node, plus validity mask."""
    rows = []
    for u in range(len(g)):
        msgs = []
        if "child" in include:
            msgs += [(v, CHILD) for v in g.children[u]]
        if "parent" in include and g.parent[u] >= 0:
            msgs.append((g.parent[u], PARENT))
        if "sibling" in include:
            msgs += [(v, SIBLING) for v in g.siblings(u)]
        if "exclusion" in include:
            msgs += [(v, EXCLUSION) for v in sorted(g.exclusion[u])]
        rows.append(msgs)
    width = max(1, max(len(r) for r in rows))
    nbr = np.zeros((len(g), width), dtype=np.intp)
    rel = np.zeros((len(g), width), dtype=np.intp)
    mask = np.zeros((len(g), width), dtype=bool)
    for u, msgs in enumerate(rows):
        for j, (v, r) in enumerate(msgs):
            nbr[u, j], rel[u, j], mask[u, j] = v, r, True
    return nbr, rel, mask


def multi_hop_neighborhood(g: CodeGraph, u: int, hops: int) -> set[int]:
    """Nodes within ``hops`` undirected steps of ``u`` (any relation), excluding u."""
    dist = {u: 0}
    queue = deque([u])
    while queue:
        a = queue.popleft()
        if dist[a] == hops:
            continue
        nxt = list(g.children[a]) + g.siblings(a) + sorted(g.exclusion[a])
        if g.parent[a] >= 0:
            nxt.append(g.parent[a])
        for b in nxt:
            if b not in dist:
                dist[b] = dist[a] + 1
                queue.append(b)
    return set(dist) - {u}


def multi_hop_matrix(g: CodeGraph, hops: int):
    """Row-normalised sparse averaging operator over each node's H-hop set."""
    rows, cols, vals = [], [], []
    for u in range(len(g)):
        hood = sorted(multi_hop_neighborhood(g, u, hops))
        for v in hood:
            rows.append(u)
            cols.append(v)
            vals.append(1.0 / len(hood))
    return sparse.csr_matrix((vals, (rows, cols)), shape=(len(g), len(g)))


class RelationalAggregator:
    def __init__(self, g: CodeGraph, dim: int, cfg: AggregatorConfig, rng):
        if cfg.hops < 2:
            raise ValueError("multi-hop aggregation needs hops >= 2")
        self.g, self.dim, self.cfg = g, dim, cfg
        p = {}
        for r, name in enumerate(RELATIONS):
            p[f"mim.rel.{name}"] = uniform(rng, (dim, dim), dim, f"mim.rel.{name}")
            p[f"mim.key.{name}"] = uniform(rng, (dim, dim), dim, f"mim.key.{name}")
        # near-identity self transform and a gate leaning toward the one-hop view,
        # so a code starts out close to its own embedding rather than a neighbourhood blur
        p["mim.self"] = uniform(rng, (dim, dim), dim, "mim.self")
        p["mim.self"].data += np.eye(dim)
        p["mim.query"] = uniform(rng, (dim, dim), dim, "mim.query")
        p["mim.multi"] = uniform(rng, (dim, dim), dim, "mim.multi")
        gate_out = 1 if cfg.gate == "scalar" else dim
        p["mim.gate.w"] = uniform(rng, (dim, gate_out), dim, "mim.gate.w")
        p["mim.gate.b"] = zeros((gate_out,), "mim.gate.b")
        p["mim.gate.b"].data += cfg.gate_bias
        self.params = p
        self.set_graph(g)

    def set_graph(self, g, include=RELATIONS):
        self.g = g
        self.nbr, self.rel, self.mask = one_hop_table(g, include)
        self.has_nbr = self.mask.any(axis=1)
        self.safe_mask = self.mask.copy()
        self.safe_mask[~self.has_nbr, 0] = True
        self.hop_matrix = multi_hop_matrix(g, self.cfg.hops)

    def attention(self, emb):
        """beta_O over each node's (neighbour, relation) messages, and the messages."""
        p = self.params
        n = emb.shape[0]
        msgs = T.concat([emb @ p[f"mim.rel.{r}"] for r in RELATIONS], axis=0)
        keys = T.concat([emb @ p[f"mim.key.{r}"] for r in RELATIONS], axis=0)
        flat = self.rel * n + self.nbr
        m = T.take_rows(msgs, flat)
        k = T.take_rows(keys, flat)
        q = emb @ p["mim.query"]
        scores = T.tsum(k * T.reshape(q, (n, 1, self.dim)), axis=2) * (1.0 / np.sqrt(self.dim))
        beta = T.softmax_masked(scores, self.safe_mask) * self.has_nbr[:, None].astype(float)
        return beta, m

    def one_hop(self, emb):
        """C_ui = sum_{(v,r)} beta_O(u,v,r) T_r(emb_v) + T_self(emb_u)."""
        beta, m = self.attention(emb)
        agg = T.tsum(T.reshape(beta, beta.shape + (1,)) * m, axis=1)
        return agg + emb @ self.params["mim.self"]

    def multi_hop(self, emb):
        """C_uj = P_multi applied to the mean embedding of the H-hop neighbourhood."""
        return T.spmm(self.hop_matrix, emb) @ self.params["mim.multi"]

    def gate(self, c_uj):
        return T.sigmoid(c_uj @ self.params["mim.gate.w"] + self.params["mim.gate.b"])

    def fuse(self, c_ui, c_uj):
        d = self.gate(c_uj)
        return fuse(c_ui, c_uj, d)

    def forward(self, emb):
        return self.fuse(self.one_hop(emb), self.multi_hop(emb))

    def parameters(self):
        return dict(self.params)


def fuse(c_ui, c_uj, gate):
    """C_u = (1 - D) * C_uj + D * C_ui for gate values D in (0, 1)."""
    c_ui, c_uj = T.as_tensor(c_ui), T.as_tensor(c_uj)
    if c_ui.shape != c_uj.shape:
        raise T.DimensionError(f"fuse: one-hop {c_ui.shape} and multi-hop {c_uj.shape} differ")
    return (1.0 - gate) * c_uj + gate * c_ui

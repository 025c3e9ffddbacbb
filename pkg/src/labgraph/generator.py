"""Label-path generator: a sigmoid-scored policy over graph moves, trained by REINFORCE.

A rollout starts at ROOT and moves to a child or sibling of the current
node. Choosing the current node itself closes a label cycle and stops the
rollout; reaching a leaf also stops it. Several rollouts per document
(earlier leaves forbidden) produce multi-code predictions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import tensor as T
from .encoder import uniform, zeros
from .graph import CodeGraph, neighbors
from .tensor import NumericError


class PathSpaceTooLarge(ValueError):
    pass


@dataclass(frozen=True)
class Step:
    node: int
    path: tuple[int, ...]
    candidates: tuple[int, ...]
    action: int
    prob: float

    @property
    def is_stop(self):
        return self.action == self.node


@dataclass
class Episode:
    path: list[int]
    steps: list[Step]
    termination: str  # leaf | cycle | max_len
    rewards: list[float] = field(default_factory=list)

    @property
    def actions(self):
        return [s.action for s in self.steps]

    @property
    def labels(self) -> set[int]:
        return set(self.path[1:])


class Policy:
    """pi(a|s) proportional to sigmoid(w_a . s + b_a) over the valid moves.

    w_a is a learned projection of code a's embedding; the stop move has its
    own weight vector. s = [C_current ; mean C over path ; document vector].
    """

    def __init__(self, n_nodes, code_dim, doc_dim, rng):
        self.code_dim, self.doc_dim = code_dim, doc_dim
        sd = self.state_dim
        self.params = {
            "policy.proj": uniform(rng, (sd, code_dim), code_dim, "policy.proj"),
            "policy.bias": zeros((n_nodes,), "policy.bias"),
            "policy.stop_w": uniform(rng, (sd,), sd, "policy.stop_w"),
            "policy.stop_b": zeros((1,), "policy.stop_b"),
        }

    @property
    def state_dim(self):
        return 2 * self.code_dim + self.doc_dim

    def parameters(self):
        return dict(self.params)

    def context(self, codes, docs, siblings=True):
        return PolicyContext(self, np.asarray(codes), np.asarray(docs), siblings)

    def log_probs(self, codes, docs, batch: "StepBatch", with_logits=False):
        """Differentiable log pi(a_t|s_t) for every recorded step.

        With ``with_logits`` also returns the [n, k+1] logit matrix (stop last).
        """
        p = self.params
        s = T.concat([T.take_rows(codes, batch.cur), T.spmm(batch.path_avg, codes),
                      T.take_rows(docs, batch.doc)], axis=1)
        w_nodes = codes @ T.transpose(p["policy.proj"])
        wg = T.take_rows(w_nodes, batch.cands)
        n, k = batch.cands.shape
        z = T.tsum(wg * T.reshape(s, (n, 1, self.state_dim)), axis=2) + T.take_rows(p["policy.bias"], batch.cands)
        z_stop = s @ p["policy.stop_w"] + p["policy.stop_b"]
        zall = T.concat([z, T.reshape(z_stop, (n, 1))], axis=1)
        logsig = T.log_sigmoid(zall)
        total = T.tsum(T.exp(logsig) * batch.mask, axis=1)
        chosen = T.index(logsig, (np.arange(n), batch.chosen))
        logp = chosen - T.log(total)
        return (logp, zall) if with_logits else logp


class PolicyContext:
    """Frozen numeric snapshot of the policy for fast, gradient-free rollouts."""

    def __init__(self, policy: Policy, codes, docs, siblings=True):
        p = policy.params
        self.codes, self.docs = codes, docs
        self.w_nodes = codes @ p["policy.proj"].data.T
        self.bias = p["policy.bias"].data
        self.stop_w = p["policy.stop_w"].data
        self.stop_b = float(p["policy.stop_b"].data[0])
        self.siblings = siblings
        self.evaluations = 0

    def state(self, doc, path):
        return np.concatenate([self.codes[path[-1]], self.codes[list(path)].mean(axis=0), self.docs[doc]])

    def distribution(self, doc, path, candidates):
        """Probabilities over ``candidates`` followed by the stop move."""
        s = self.state(doc, path)
        cands = list(candidates)
        z = np.empty(len(cands) + 1)
        z[:-1] = self.w_nodes[cands] @ s + self.bias[cands]
        z[-1] = self.stop_w @ s + self.stop_b
        self.evaluations += len(cands)
        sig = T._sigmoid(z)
        return sig / sig.sum()

    def actions(self, g, node, forbidden=(), context=()):
        return neighbors(g, node, forbidden, context, siblings=self.siblings)


def policy_distribution(ctx: PolicyContext, doc, path, candidates):
    return ctx.distribution(doc, path, candidates)


def _pick(p, options, mode, rng):
    if mode == "greedy":
        ties = np.flatnonzero(p == p.max())
        return int(min(ties, key=lambda i: options[i]))
    u = rng.random()
    k = int(np.searchsorted(np.cumsum(p), u * p.sum(), side="right"))
    return min(k, len(p) - 1)


def rollout(ctx: PolicyContext, doc, g: CodeGraph, mode="greedy", rng=None, forbidden=(), context=(),
            max_len=None, reward_fn=None) -> Episode:
    if mode not in ("greedy", "sample"):
        raise ValueError(f"unknown rollout mode {mode!r}")
    if mode == "sample" and rng is None:
        raise ValueError("sample mode needs an rng")
    max_len = max_len or 2 * g.depth
    path = [g.root]
    steps, rewards = [], []
    context = set(context)
    while True:
        cur = path[-1]
        cands = ctx.actions(g, cur, forbidden, context | set(path))
        p = ctx.distribution(doc, path, cands)
        options = cands + [cur]
        k = _pick(p, options, mode, rng)
        a = options[k]
        steps.append(Step(cur, tuple(path), tuple(cands), a, float(p[k])))
        if reward_fn is not None:
            rewards.append(float(reward_fn(tuple(path), a)))
        if a in path:
            term = "cycle"
            break
        path.append(a)
        if g.is_leaf(a):
            term = "leaf"
            break
        if len(steps) >= max_len:
            term = "max_len"
            break
    return Episode(path, steps, term, rewards)


def generate(ctx, doc, g, mode="greedy", rng=None, budget=8, max_len=None):
    """Repeated rollouts until one adds nothing new or the budget runs out."""
    forbidden, predicted, episodes = set(), set(), []
    for _ in range(budget):
        ep = rollout(ctx, doc, g, mode, rng, frozenset(forbidden), frozenset(predicted), max_len)
        episodes.append(ep)
        new = ep.labels - predicted
        if not new:
            break
        predicted |= new
        forbidden |= {n for n in ep.labels if g.is_leaf(n)}
    return episodes, predicted


def gold_targets(g: CodeGraph, gold):
    """Deepest gold nodes: those with no gold child."""
    gold = set(gold)
    return sorted(n for n in gold if not gold.intersection(g.children[n]))


def teacher_episodes(g: CodeGraph, gold, siblings=True) -> list[Episode]:
    """Gold trajectories under the same action rules as ``generate``.

    One rollout per deepest gold node (earlier graph leaves forbidden), then a
    final rollout that walks to the last target's parent and stops there.
    """
    forbidden, predicted, episodes = set(), set(), []
    targets = gold_targets(g, gold)

    def walk(route, stop):
        path, steps = [g.root], []
        for a in route[1:]:
            cands = neighbors(g, path[-1], forbidden, predicted | set(path), siblings)
            if a not in cands:
                raise ValueError(f"gold move {g.code_of(a)} is not a valid action")
            steps.append(Step(path[-1], tuple(path), tuple(cands), a, 1.0))
            path.append(a)
        term = "leaf"
        if stop:
            cands = neighbors(g, path[-1], forbidden, predicted | set(path), siblings)
            steps.append(Step(path[-1], tuple(path), tuple(cands), path[-1], 1.0))
            term = "cycle"
        return Episode(path, steps, term)

    for t in targets:
        episodes.append(walk(g.ancestors(t), stop=not g.is_leaf(t)))
        predicted |= set(g.ancestors(t)[1:])
        if g.is_leaf(t):
            forbidden.add(t)
    last = targets[-1] if targets else g.root
    episodes.append(walk(g.ancestors(g.parent[last]) if last != g.root else [g.root], stop=True))
    return episodes


class StepBatch:
    """Padded arrays describing a list of (doc index, Step) pairs."""

    def __init__(self, items, n_nodes):
        n = len(items)
        k = max(1, max(len(s.candidates) for _, s in items))
        self.doc = np.array([d for d, _ in items], dtype=np.intp)
        self.cur = np.array([s.node for _, s in items], dtype=np.intp)
        self.cands = np.zeros((n, k), dtype=np.intp)
        self.mask = np.zeros((n, k + 1))
        self.mask[:, k] = 1.0
        self.chosen = np.full(n, k, dtype=np.intp)
        rows, cols, vals = [], [], []
        for i, (_, s) in enumerate(items):
            c = s.candidates
            self.cands[i, :len(c)] = c
            self.mask[i, :len(c)] = 1.0
            if not s.is_stop:
                self.chosen[i] = c.index(s.action)
            for node in s.path:
                rows.append(i)
                cols.append(node)
                vals.append(1.0 / len(s.path))
        self.path_avg = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n_nodes))

    def __len__(self):
        return len(self.doc)


# ---------------------------------------------------------------- exact oracle

def expected_return_exact(ctx, doc, g, reward_fn, forbidden=(), context=(), max_len=None, limit=10_000):
    """Sum over every terminating rollout of P(path) * total reward.

    Test oracle only: enumerates the whole path space.
    """
    max_len = max_len or 2 * g.depth
    count = [0]

    def expand(path, n_steps):
        cur = path[-1]
        cands = ctx.actions(g, cur, forbidden, set(context) | set(path))
        p = ctx.distribution(doc, path, cands)
        total = 0.0
        for a, pa in zip(cands + [cur], p):
            r = reward_fn(tuple(path), a)
            if a in path or g.is_leaf(a) or n_steps + 1 >= max_len:
                count[0] += 1
                if count[0] > limit:
                    raise PathSpaceTooLarge(f"more than {limit} terminating paths")
                total += pa * r
            else:
                total += pa * (r + expand(path + [a], n_steps + 1))
        return total

    return expand([g.root], 0)


def count_paths(g, max_len=None, siblings=True, limit=10**6):
    """Number of distinct terminating rollouts (size estimate for the oracle)."""
    max_len = max_len or 2 * g.depth

    def expand(path, n):
        total = 0
        for a in neighbors(g, path[-1], (), set(path), siblings) + [path[-1]]:
            if a in path or g.is_leaf(a) or n + 1 >= max_len:
                total += 1
            else:
                total += expand(path + [a], n + 1)
            if total > limit:
                return total
        return total

    return expand([g.root], 0)


# ---------------------------------------------------------------- REINFORCE

class RunningBaseline:
    """Running mean of returns, kept per step index within a trajectory."""

    def __init__(self, momentum=0.9):
        self.momentum = momentum
        self.values: list[float] = []

    def get(self, n):
        vals = self.values + [self.values[-1] if self.values else 0.0] * max(0, n - len(self.values))
        return np.array(vals[:n])

    def update(self, returns_by_index):
        for t, rs in enumerate(returns_by_index):
            m = float(np.mean(rs))
            if t < len(self.values):
                self.values[t] = self.momentum * self.values[t] + (1 - self.momentum) * m
            else:
                self.values.append(m)


def returns_to_go(rewards):
    """Undiscounted G_t = sum of rewards from t onward."""
    return np.cumsum(np.asarray(rewards, dtype=float)[::-1])[::-1]


def reinforce_loss(trajectories, logp_fn, baseline=None):
    """Surrogate whose gradient is minus the REINFORCE estimate.

    ``trajectories`` is a list of (doc index, [Episode, ...]); episode rewards
    must be filled in. Returns (loss tensor, owner array, diagnostics).
    """
    items, adv, owner, by_index, totals = [], [], [], [], []
    for i, (doc, episodes) in enumerate(trajectories):
        steps = [s for ep in episodes for s in ep.steps]
        rewards = [r for ep in episodes for r in ep.rewards]
        if len(rewards) != len(steps):
            raise ValueError("every step needs a reward")
        g_t = returns_to_go(rewards)
        totals.append(g_t[0] if len(g_t) else 0.0)
        if isinstance(baseline, RunningBaseline):
            b = baseline.get(len(g_t))
        else:
            b = np.full(len(g_t), 0.0 if baseline is None else float(baseline))
        items += [(doc, s) for s in steps]
        adv.extend(g_t - b)
        owner.extend([i] * len(steps))
        for t, v in enumerate(g_t):
            if t == len(by_index):
                by_index.append([])
            by_index[t].append(v)
    if isinstance(baseline, RunningBaseline):
        baseline.update(by_index)
    logp = logp_fn(items)
    adv = np.asarray(adv)
    loss = -T.tsum(logp * adv) * (1.0 / len(trajectories))
    return loss, np.asarray(owner), {"mean_return": float(np.mean(totals)), "logp": logp.data, "adv": adv}


def reinforce_update(trajectories, logp_fn, params, optimizer, baseline=None):
    """One ascent step on the expected return; aborts on non-finite gradients."""
    for p in params.values():
        p.grad = None
    loss, owner, diag = reinforce_loss(trajectories, logp_fn, baseline)
    bad = ~np.isfinite(diag["logp"]) | ~np.isfinite(diag["adv"])
    if bad.any():
        raise NumericError(f"non-finite policy gradient in episode {int(owner[bad][0])}")
    loss.backward()
    grads = [p.grad for p in params.values() if p.grad is not None]
    norm = float(np.sqrt(sum((g * g).sum() for g in grads)))
    if not np.isfinite(norm):
        raise NumericError(f"non-finite policy gradient in episode {int(owner[0])}")
    optimizer.step(params)
    diag.update(loss=float(loss.data), grad_norm=norm)
    return diag

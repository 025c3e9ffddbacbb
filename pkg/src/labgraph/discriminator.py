"""LSTM path discriminator: probability that a label path is authentic for a document."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .encoder import uniform, zeros
from .tensor import NumericError, Tensor


class Discriminator:
    """h = sigma(M_h [LSTM(c_1..c_i) ; x]) with a zero initial LSTM state."""

    def __init__(self, code_dim, doc_dim, hidden, rng):
        self.hidden = hidden
        self.params = {
            "disc.w_ih": uniform(rng, (4 * hidden, code_dim), code_dim, "disc.w_ih"),
            "disc.w_hh": uniform(rng, (4 * hidden, hidden), hidden, "disc.w_hh"),
            "disc.b": zeros((4 * hidden,), "disc.b"),
            "disc.m_h": uniform(rng, (hidden + doc_dim,), hidden + doc_dim, "disc.m_h"),
        }

    def parameters(self):
        return dict(self.params)

    @property
    def lstm(self):
        return {"w_ih": self.params["disc.w_ih"], "w_hh": self.params["disc.w_hh"], "b": self.params["disc.b"]}

    def logits(self, paths, docs: Tensor, code_table: Tensor) -> Tensor:
        """One logit per path; ``docs`` holds the matching document vectors row-wise."""
        if any(len(p) == 0 for p in paths):
            raise ValueError("discriminator paths must be non-empty")
        n = len(paths)
        n_codes = code_table.shape[0]
        for p in paths:
            for c in p:
                if not 0 <= c < n_codes:
                    raise KeyError(f"unknown code id {c}")
        lengths = np.array([len(p) for p in paths])
        steps = int(lengths.max())
        ids = np.zeros((n, steps), dtype=np.intp)
        for i, p in enumerate(paths):
            ids[i, :len(p)] = p
        h = Tensor(np.zeros((n, self.hidden)))
        c = Tensor(np.zeros((n, self.hidden)))
        final = None
        for t in range(steps):
            x_t = T.take_rows(code_table, ids[:, t])
            h, c = T.lstm_cell(x_t, h, c, self.lstm)
            pick = (lengths == t + 1).astype(float)[:, None]
            final = h * pick if final is None else final + h * pick
        feats = T.concat([final, docs], axis=1)
        return feats @ self.params["disc.m_h"]

    def discriminate(self, paths, docs, code_table) -> Tensor:
        return T.sigmoid(self.logits(paths, docs, code_table))

    def loss(self, paths, labels, docs, code_table):
        """Mean binary cross-entropy; labels are 1 for authentic paths."""
        z = self.logits(paths, docs, code_table)
        y = np.asarray(labels, dtype=float)
        loss = T.mean(T.softplus(z) - z * y)
        return loss, z


def bce_with_logits(z, y):
    y = np.asarray(y, dtype=float)
    return T.mean(T.softplus(z) - z * y)


def reward_for(disc: Discriminator, prefix, doc_vec, code_table) -> float:
    """Authenticity probability of a path prefix; a pure function of its inputs."""
    with T.no_grad():
        p = disc.discriminate([list(prefix)], Tensor(np.asarray(doc_vec)[None, :]), T.as_tensor(code_table))
    return float(p.data[0])


def batch_rewards(disc, prefixes, doc_rows, docs_np, code_np):
    """Vectorised reward_for over many (prefix, document row) pairs."""
    if not prefixes:
        return np.zeros(0)
    with T.no_grad():
        p = disc.discriminate(prefixes, Tensor(docs_np[np.asarray(doc_rows)]), Tensor(code_np))
    return p.data


def train_discriminator(disc, positives, negatives, docs_fn, code_table, optimizer, epochs=1, extra_params=()):
    """Full-batch descent on BCE of positives (label 1) vs negatives (label 0).

    positives/negatives: lists of (doc index, path). ``docs_fn(doc_indices)``
    returns the document-vector tensor rows. Returns the per-epoch loss curve.
    """
    if not positives or not negatives:
        raise ValueError("discriminator training needs positive and negative samples")
    samples = positives + negatives
    labels = [1] * len(positives) + [0] * len(negatives)
    paths = [p for _, p in samples]
    rows = np.array([d for d, _ in samples])
    params = dict(disc.params)
    params.update(extra_params)
    curve = []
    for _ in range(epochs):
        for p in params.values():
            p.grad = None
        loss, _ = disc.loss(paths, labels, docs_fn(rows), code_table)
        if not np.isfinite(loss.data):
            raise NumericError("discriminator loss is not finite")
        loss.backward()
        optimizer.step(params)
        curve.append(float(loss.data))
    return curve

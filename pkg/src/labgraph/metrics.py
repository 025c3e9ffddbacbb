"""Multi-label evaluation: micro/macro F1, micro/macro ROC-AUC and precision@k."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata


class UndefinedAucError(ValueError):
    pass


@dataclass
class PredictionRecord:
    doc_id: str
    scores: np.ndarray  # one score per label index
    predicted: set[int]
    gold: set[int]

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=float)
        n = len(self.scores)
        if any(not 0 <= i < n for i in self.predicted | self.gold):
            raise ValueError(f"{self.doc_id}: label outside the {n}-label space")


@dataclass
class MetricReport:
    macro_auc: float
    micro_auc: float
    macro_f1: float
    micro_f1: float
    p_at_k: dict[int, float]
    counts: dict[str, int] = field(default_factory=dict)
    config_hash: str = ""

    def rows(self):
        out = [("macro_auc", self.macro_auc), ("micro_auc", self.micro_auc),
               ("macro_f1", self.macro_f1), ("micro_f1", self.micro_f1)]
        out += [(f"P@{k}", v) for k, v in sorted(self.p_at_k.items())]
        out += [(k, v) for k, v in sorted(self.counts.items())]
        return out

    def to_tsv(self):
        lines = [f"{name}\t{_fmt(v)}" for name, v in self.rows()]
        if self.config_hash:
            lines.append(f"config_hash\t{self.config_hash}")
        return "\n".join(lines) + "\n"

    def to_table(self):
        width = max(len(n) for n, _ in self.rows())
        lines = [f"{'metric':<{width}}  value", "-" * (width + 10)]
        lines += [f"{n:<{width}}  {_fmt(v)}" for n, v in self.rows()]
        return "\n".join(lines) + "\n"


def _fmt(v):
    return str(v) if isinstance(v, (int, np.integer)) else f"{v:.6f}"


def _indicators(records):
    n_labels = len(records[0].scores)
    pred = np.zeros((len(records), n_labels), dtype=bool)
    gold = np.zeros_like(pred)
    for i, r in enumerate(records):
        pred[i, list(r.predicted)] = True
        gold[i, list(r.gold)] = True
    return pred, gold


def micro_macro_f1(records):
    """(macro, micro) F1; a label with zero precision+recall scores 0."""
    pred, gold = _indicators(records)
    tp = (pred & gold).sum(axis=0)
    fp = (pred & ~gold).sum(axis=0)
    fn = (~pred & gold).sum(axis=0)
    denom = 2 * tp + fp + fn
    per_label = np.where(denom > 0, 2 * tp / np.maximum(denom, 1), 0.0)
    macro = math.fsum(per_label) / len(per_label)  # order-independent, so exact against any oracle
    total = 2 * tp.sum() + fp.sum() + fn.sum()
    micro = float(2 * tp.sum() / total) if total else 0.0
    return macro, micro


def auc(scores, labels):
    """ROC-AUC from the Mann-Whitney rank statistic with midranks for ties."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    n_pos, n_neg = labels.sum(), (~labels).sum()
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAucError("AUC needs both a positive and a negative")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def micro_macro_auc(records):
    """(macro, micro, n_skipped); macro skips labels lacking either class."""
    _, gold = _indicators(records)
    scores = np.stack([r.scores for r in records])
    if not np.isfinite(scores).all():
        raise ValueError("scores must be finite")
    per_label = []
    skipped = 0
    for j in range(scores.shape[1]):
        col = gold[:, j]
        if col.all() or not col.any():
            skipped += 1
            continue
        per_label.append(auc(scores[:, j], col))
    if not per_label:
        raise UndefinedAucError("no label has both positive and negative documents")
    micro = auc(scores.ravel(), gold.ravel())
    return math.fsum(per_label) / len(per_label), micro, skipped


def top_k(scores, k):
    """Indices of the k highest scores; ties resolved toward lower label ids."""
    order = np.lexsort((np.arange(len(scores)), -np.asarray(scores)))
    return order[:k]


def precision_at_k(records, k):
    if k < 1 or k > len(records[0].scores):
        raise ValueError("k must lie in [1, number of labels]")
    vals = [len(set(top_k(r.scores, k).tolist()) & r.gold) / k for r in records]
    return math.fsum(vals) / len(vals)


def report(records, ks=(5, 8), config_hash=""):
    macro_f1, micro_f1 = micro_macro_f1(records)
    try:
        macro_auc, micro_auc, skipped = micro_macro_auc(records)
    except UndefinedAucError:
        macro_auc, micro_auc, skipped = float("nan"), float("nan"), len(records[0].scores)
    n_labels = len(records[0].scores)
    pk = {k: precision_at_k(records, k) for k in ks if k <= n_labels}
    counts = {"n_docs": len(records), "n_labels": n_labels, "auc_skipped_labels": skipped}
    return MetricReport(macro_auc, micro_auc, macro_f1, micro_f1, pk, counts, config_hash)


def set_f1(predicted, gold):
    """Micro-F1 of a single predicted set against its gold set."""
    predicted, gold = set(predicted), set(gold)
    denom = len(predicted) + len(gold)
    return 2 * len(predicted & gold) / denom if denom else 1.0

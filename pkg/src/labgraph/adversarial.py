"""Adversarial embedding perturbations with a symmetrised-KL smoothness term."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import NumericError, Tensor

FLOOR = 1e-12


@dataclass
class AatConfig:
    epsilon: float = 0.1
    steps: int = 1
    ascent_lr: float | None = None  # defaults to epsilon
    kl_weight: float = 1.0
    norm: str = "l2"  # l2 | linf
    target: str = "both"  # discriminator | generator | both

    def validate(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ValueError("aat.epsilon must lie in (0, 1]")
        if self.steps < 1:
            raise ValueError("aat.steps must be >= 1")
        if self.norm not in ("l2", "linf"):
            raise ValueError("aat.norm must be l2 or linf")


def project(r, eps, norm="l2", axes=None):
    """Project each slice of ``r`` (reduced over ``axes``) onto the eps-ball."""
    r = np.asarray(r, dtype=float)
    if norm == "linf":
        return np.clip(r, -eps, eps)
    axes = tuple(range(r.ndim)) if axes is None else axes
    n = np.sqrt((r * r).sum(axis=axes, keepdims=True))
    scale = np.where(n > eps, eps / np.where(n > 0, n, 1.0), 1.0)
    out = r * scale
    # rounding can leave a norm a hair above eps; shrink until it is not
    while True:
        n = np.sqrt((out * out).sum(axis=axes, keepdims=True))
        over = n > eps
        if not over.any():
            return out
        out = np.where(over, out * np.nextafter(1.0, 0.0), out)


def find_perturbation(loss_fn, shape, cfg: AatConfig, mask=None, axes=None):
    """Projected normalised-gradient ascent on ``loss_fn(r)`` from r = 0.

    ``loss_fn`` maps a perturbation tensor to a scalar loss. ``mask`` zeroes
    positions that must stay unperturbed (padding).
    """
    if cfg.epsilon <= 0:
        raise ValueError("epsilon must be positive")
    step = cfg.ascent_lr if cfg.ascent_lr is not None else cfg.epsilon
    r = np.zeros(shape)
    axes = tuple(range(len(shape))) if axes is None else axes
    for _ in range(cfg.steps):
        rt = Tensor(r, requires_grad=True)
        loss = loss_fn(rt)
        loss.backward(wrt=[rt])
        g = rt.grad if rt.grad is not None else np.zeros(shape)
        if mask is not None:
            g = g * mask
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient while searching for a perturbation")
        if cfg.norm == "linf":
            direction = np.sign(g)
        else:
            n = np.sqrt((g * g).sum(axis=axes, keepdims=True))
            direction = np.where(n > 0, g / np.where(n > 0, n, 1.0), 0.0)
        r = project(r + step * direction, cfg.epsilon, cfg.norm, axes)
    return r


def symmetric_kl(p, q):
    """KL(p||q) + KL(q||p) summed over the last axis, entries floored at 1e-12.

    Accepts tensors or arrays; returns a tensor (one value per leading index).
    """
    p, q = T.as_tensor(p), T.as_tensor(q)
    if p.shape != q.shape:
        raise T.DimensionError(f"symmetric_kl: support mismatch {p.shape} vs {q.shape}")
    p, q = T.clamp_min(p, FLOOR), T.clamp_min(q, FLOOR)
    diff = T.log(p) - T.log(q)
    return T.tsum((p - q) * diff, axis=-1)


def binary_dist(prob):
    """[p, 1 - p] along a new last axis."""
    prob = T.as_tensor(prob)
    col = T.reshape(prob, prob.shape + (1,))
    return T.concat([col, 1.0 - col], axis=-1)


def aat_loss(forward, e: Tensor, cfg: AatConfig, mask=None, axes=None, r_adv=None):
    """0.5 * clean loss + 0.5 * perturbed loss + kl_weight * symmetric KL.

    ``forward(embeddings)`` returns (scalar loss, per-sample distributions).
    The perturbation is found against the current parameters (unless given)
    and then held constant.
    """
    clean_loss, clean_dist = forward(e)
    if r_adv is None:
        const_e = Tensor(e.data)
        r_adv = find_perturbation(lambda r: forward(const_e + r)[0], e.shape, cfg, mask, axes)
    adv_loss, adv_dist = forward(e + r_adv)
    kl = T.mean(symmetric_kl(clean_dist, adv_dist))
    total = clean_loss * 0.5 + adv_loss * 0.5 + kl * cfg.kl_weight
    return total, {"clean": float(clean_loss.data), "adv": float(adv_loss.data), "kl": float(kl.data),
                   "r_norm": float(np.sqrt((r_adv ** 2).sum(axis=axes)).max()) if r_adv.size else 0.0}

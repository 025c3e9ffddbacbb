"""MHR-CNN text encoder: multi-width convolution headers plus residual conv blocks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

PAD = 0
UNK = 1
_NEG = 1e30


class EmptyInputError(ValueError):
    pass


@dataclass
class EncoderConfig:
    embed_dim: int = 16
    kernel_sizes: tuple[int, ...] = (3, 5, 7)
    channels: int = 16
    residual_blocks: int = 3
    block_width: int = 3

    @property
    def out_dim(self):
        return len(self.kernel_sizes) * self.channels


def uniform(rng, shape, fan_in, name):
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


def zeros(shape, name):
    return Tensor(np.zeros(shape), requires_grad=True, name=name)


class Batch:
    """Token ids padded to a common length; ``lengths`` are true lengths."""

    def __init__(self, token_ids, min_len=1):
        if any(len(t) == 0 for t in token_ids):
            raise EmptyInputError("cannot encode an empty document")
        self.lengths = np.array([len(t) for t in token_ids])
        # short documents are zero-padded up to the widest kernel
        self.valid = np.maximum(self.lengths, min_len)
        width = int(self.valid.max())
        self.ids = np.full((len(token_ids), width), PAD, dtype=np.int64)
        for i, t in enumerate(token_ids):
            self.ids[i, :len(t)] = t

    def __len__(self):
        return len(self.lengths)

    @property
    def token_mask(self):
        return (self.ids != PAD).astype(float)


class TextEncoder:
    def __init__(self, cfg: EncoderConfig, vocab_size: int, rng, plain: bool = False):
        self.cfg = cfg
        self.plain = plain
        d, c = cfg.embed_dim, cfg.channels
        p = {"encoder.embed": uniform(rng, (vocab_size, d), vocab_size, "encoder.embed")}
        for n, k in enumerate(cfg.kernel_sizes):
            p[f"encoder.mcf.{n}.w"] = uniform(rng, (c, d, k), d * k, f"encoder.mcf.{n}.w")
            p[f"encoder.mcf.{n}.b"] = zeros((c,), f"encoder.mcf.{n}.b")
            for i in range(cfg.residual_blocks):
                for j in (1, 2, 3):
                    name = f"encoder.mcb.{n}.{i}.c{j}"
                    p[name] = uniform(rng, (c, c, cfg.block_width), c * cfg.block_width, name)
        # conventional single-width CNN used when the multi-header path is ablated
        k = self.plain_kernel
        p["encoder.plain.w"] = uniform(rng, (cfg.out_dim, d, k), d * k, "encoder.plain.w")
        p["encoder.plain.b"] = zeros((cfg.out_dim,), "encoder.plain.b")
        self.params = p

    @property
    def plain_kernel(self):
        ks = self.cfg.kernel_sizes
        return sorted(ks)[len(ks) // 2]

    @property
    def min_len(self):
        return self.plain_kernel if self.plain else max(self.cfg.kernel_sizes)

    def batch(self, token_ids) -> Batch:
        return Batch(token_ids, self.min_len)

    def embed(self, batch: Batch) -> Tensor:
        e = T.take_rows(self.params["encoder.embed"], batch.ids)
        return e * batch.token_mask[:, :, None]

    # ------------------------------------------------------------------ pieces

    def _positions(self, batch, width, k):
        lo = width - k + 1
        n_valid = batch.valid - k + 1
        return (np.arange(lo)[None, :] < n_valid[:, None]).astype(float)[:, None, :]

    def mcf_maps(self, e: Tensor, batch: Batch):
        """Per-header tanh convolution maps, zeroed beyond each document's windows."""
        x = T.swapaxes(e, 1, 2)
        width = e.shape[1]
        maps = []
        for n, k in enumerate(self.cfg.kernel_sizes):
            m = T.tanh(T.conv1d(x, self.params[f"encoder.mcf.{n}.w"], self.params[f"encoder.mcf.{n}.b"]))
            maps.append((m * self._positions(batch, width, k), k))
        return maps

    def mcf_forward(self, e: Tensor, batch: Batch):
        """F_n = max over windows of tanh(W_n^T X^{j:j+k_n-1}), one vector per header."""
        return [self._pool(m, mask) for m, mask in
                ((m, self._positions(batch, e.shape[1], k)) for m, k in self.mcf_maps(e, batch))]

    def mcb_forward(self, feature_map: Tensor, mask, header: int):
        """Residual blocks: I1 = tanh(c1 F); F' = tanh(c2 I1 + c3 I1) + F."""
        pad = self.cfg.block_width // 2
        right = self.cfg.block_width - 1 - pad
        f = feature_map
        for i in range(self.cfg.residual_blocks):
            w = [self.params[f"encoder.mcb.{header}.{i}.c{j}"] for j in (1, 2, 3)]
            if f.shape[1] != w[0].shape[1]:
                raise T.DimensionError(f"mcb: feature channels {f.shape[1]} != block channels {w[0].shape[1]}")
            i1 = T.tanh(T.conv1d(T.pad1d(f, pad, right), w[0])) * mask
            i1p = T.pad1d(i1, pad, right)
            f = (T.tanh(T.conv1d(i1p, w[1]) + T.conv1d(i1p, w[2])) + f) * mask
        return f

    @staticmethod
    def _pool(m, mask):
        return T.max_over_axis(m + (mask - 1.0) * _NEG, axis=2)

    # ------------------------------------------------------------------ full pass

    def encode_embedded(self, e: Tensor, batch: Batch) -> Tensor:
        width = e.shape[1]
        if self.plain:
            k = self.plain_kernel
            x = T.swapaxes(e, 1, 2)
            m = T.tanh(T.conv1d(x, self.params["encoder.plain.w"], self.params["encoder.plain.b"]))
            mask = self._positions(batch, width, k)
            return self._pool(m * mask, mask)
        pooled = []
        for n, (m, k) in enumerate(self.mcf_maps(e, batch)):
            mask = self._positions(batch, width, k)
            pooled.append(self._pool(self.mcb_forward(m, mask, n), mask))
        return T.concat(pooled, axis=1)

    def encode(self, batch: Batch) -> Tensor:
        return self.encode_embedded(self.embed(batch), batch)

    def parameters(self):
        names = [k for k in self.params if not k.startswith("encoder.plain")] if not self.plain else \
            ["encoder.embed", "encoder.plain.w", "encoder.plain.b"]
        return {k: self.params[k] for k in names}

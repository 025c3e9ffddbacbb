"""Parameter container wiring encoder, code embeddings, aggregator, policy and discriminator."""
from __future__ import annotations

import numpy as np

from .aggregator import RelationalAggregator
from .checkpoint import Checkpoint
from .discriminator import Discriminator
from .encoder import TextEncoder, uniform
from .generator import Policy


class LabGraphModel:
    """All trainable pieces. Every component is initialised regardless of the
    ablation flags, so the random draws (and hence shared parameters) do not
    depend on which parts are switched off."""

    def __init__(self, cfg, graph, vocab_size):
        self.cfg, self.graph = cfg, graph
        rng = np.random.default_rng([cfg.train.seed, 11])
        d_c = cfg.generator.code_dim
        self.encoder = TextEncoder(cfg.encoder, vocab_size, rng, plain=not cfg.train.mhr_cnn)
        self.code_embed = uniform(rng, (len(graph), d_c), len(graph), "codes.embed")
        self.aggregator = RelationalAggregator(graph, d_c, cfg.aggregator, rng)
        self.policy = Policy(len(graph), d_c, cfg.encoder.out_dim, rng)
        self.disc = Discriminator(d_c, cfg.encoder.out_dim, cfg.discriminator.hidden, rng)

    def codes(self):
        """Code representations C: relation-aware when mim is on, raw embeddings otherwise."""
        if self.cfg.train.mim:
            return self.aggregator.forward(self.code_embed)
        return self.code_embed

    def generator_parameters(self):
        p = dict(self.encoder.parameters())
        p["codes.embed"] = self.code_embed
        if self.cfg.train.mim:
            p.update(self.aggregator.parameters())
        p.update(self.policy.parameters())
        return p

    def discriminator_parameters(self):
        # the document vector is shared, so the discriminator also shapes the encoder
        p = dict(self.disc.parameters())
        p.update(self.encoder.parameters())
        return p

    def named_parameters(self):
        p = dict(self.encoder.params)
        p["codes.embed"] = self.code_embed
        p.update(self.aggregator.params)
        p.update(self.policy.params)
        p.update(self.disc.params)
        return dict(sorted(p.items()))

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state):
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"checkpoint lacks tensors: {sorted(missing)[:5]}")
        for k, p in params.items():
            if state[k].shape != p.data.shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.data.shape}")
            p.data[...] = state[k]

    def checkpoint(self, round_=0):
        return Checkpoint(self.state_dict(), self.cfg.hash(), round_)

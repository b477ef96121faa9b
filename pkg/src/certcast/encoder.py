"""Inverted transformer encoder: each variate's lookback is one token."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .layers import Linear, Module
from .rng import Rng

N_TIME_FEATURES = 2


@dataclass(frozen=True)
class EncoderConfig:
    D: int = 32
    n_layers: int = 2
    heads: int = 4
    ffn_mult: int = 4

    def __post_init__(self):
        if self.n_layers < 1:
            raise ValueError("encoder needs at least one layer")
        if self.D % self.heads:
            raise ValueError(f"D={self.D} is not divisible by heads={self.heads}")


class EncoderLayer(Module):
    def __init__(self, cfg: EncoderConfig, rng: Rng):
        D = cfg.D
        self.heads = cfg.heads
        self.q = Linear(D, D, rng)
        self.k = Linear(D, D, rng)
        self.v = Linear(D, D, rng)
        self.o = Linear(D, D, rng)
        self.ff1 = Linear(D, cfg.ffn_mult * D, rng)
        self.ff2 = Linear(cfg.ffn_mult * D, D, rng)
        self.norm1_g = tc.parameter(np.ones(D))
        self.norm1_b = tc.parameter(np.zeros(D))
        self.norm2_g = tc.parameter(np.ones(D))
        self.norm2_b = tc.parameter(np.zeros(D))

    def _split(self, x: tc.Tensor) -> tc.Tensor:
        B, n, D = x.shape
        return x.reshape(B, n, self.heads, D // self.heads).transpose(0, 2, 1, 3)

    def attention_weights(self, E) -> tc.Tensor:
        """Softmax scores ``[B, heads, d, d]`` over the variate axis."""
        E = tc.as_tensor(E)
        dh = E.shape[-1] // self.heads
        q, k = self._split(self.q(E)), self._split(self.k(E))
        scores = tc.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(dh))
        return tc.softmax(scores, axis=-1)

    def __call__(self, E) -> tc.Tensor:
        E = tc.as_tensor(E)
        B, n, D = E.shape
        attn = self.attention_weights(E)
        ctx = tc.matmul(attn, self._split(self.v(E)))
        ctx = ctx.transpose(0, 2, 1, 3).reshape(B, n, D)
        E1 = tc.layernorm(E + self.o(ctx), self.norm1_g, self.norm1_b)
        ffn = self.ff2(tc.silu(self.ff1(E1)))
        return tc.layernorm(E1 + ffn, self.norm2_g, self.norm2_b)


class InvertedEncoder(Module):
    def __init__(self, L: int, d: int, cfg: EncoderConfig, rng: Rng):
        self.cfg = cfg
        self.L = L
        self.embed = Linear(L, cfg.D, rng)
        self.pos = tc.parameter(rng.uniform((d, cfg.D), -1 / np.sqrt(cfg.D), 1 / np.sqrt(cfg.D)))
        self.time = Linear(N_TIME_FEATURES, cfg.D, rng)
        self.layers = [EncoderLayer(cfg, rng) for _ in range(cfg.n_layers)]


def embed_inverted(X, enc: InvertedEncoder, time_feats) -> tc.Tensor:
    """``Linear(X^T) + PosEnc + TimeEnc`` -> ``[B, d, D]``.

    ``time_feats`` is ``[B, 2]``: normalised window start and mean timestamp gap.
    """
    X = tc.as_tensor(X)
    if X.shape[1] != enc.L:
        raise ValueError(f"encoder built for L={enc.L}, got {X.shape[1]}")
    tokens = enc.embed(X.transpose(0, 2, 1))
    tfeat = enc.time(tc.as_tensor(time_feats)).reshape(X.shape[0], 1, enc.cfg.D)
    return tokens + enc.pos + tfeat


def encoder_layer(E, layer: EncoderLayer) -> tc.Tensor:
    return layer(E)


def encode(X, enc: InvertedEncoder, time_feats) -> tc.Tensor:
    E = embed_inverted(X, enc, time_feats)
    for layer in enc.layers:
        E = layer(E)
    return E

"""The full forecaster: spectral filter -> inverted encoder -> gated spectral head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tc
from .encoder import EncoderConfig, InvertedEncoder, encode
from .layers import Module
from .rng import Rng
from .spectral import (GateBlend, LaplaceBasis, SpectralFilter, fourier_filter, gated_blend,
                       laplace_params, laplace_reconstruct)


@dataclass(frozen=True)
class ModelConfig:
    L: int = 96
    H: int = 96
    d: int = 8
    D: int = 32
    n_layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    K: int = 8
    n_modes: int | None = None
    spectral: bool = True
    seed: int = 0


class Forecaster(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = Rng(cfg.seed).spawn("init")
        enc_cfg = EncoderConfig(cfg.D, cfg.n_layers, cfg.heads, cfg.ffn_mult)
        # built unconditionally so that ablations share identical initial weights
        self.filter = SpectralFilter(cfg.L, cfg.n_modes)
        self.encoder = InvertedEncoder(cfg.L, cfg.d, enc_cfg, rng.spawn("encoder"))
        self.laplace = LaplaceBasis(cfg.D, cfg.K, rng.spawn("laplace"))
        self.gate = GateBlend(cfg.D, cfg.H, rng.spawn("head"))

    def named_parameters(self, prefix: str = ""):
        params = super().named_parameters(prefix)
        if not self.cfg.spectral:
            params = [(n, p) for n, p in params
                      if not n.startswith(("filter.", "laplace.", "gate.beta"))]
        return params

    def features(self, X, time_feats) -> tc.Tensor:
        X = tc.as_tensor(X)
        if self.cfg.spectral:
            X = fourier_filter(X, self.filter)
        return encode(X, self.encoder, time_feats)

    def forward(self, X, time_feats) -> tc.Tensor:
        """``X[B, L, d]`` -> forecast ``[B, H, d]``."""
        h = self.features(X, time_feats)
        lin = self.gate.linear(h)
        if not self.cfg.spectral:
            return lin
        spec = tc.rfft(h)
        params = laplace_params(self.laplace, h, spec.re, spec.im)
        lap = laplace_reconstruct(params, self.laplace.time_projector, self.cfg.H)
        return gated_blend(lin, lap, self.gate.beta)

    __call__ = forward

    def state_arrays(self) -> list[np.ndarray]:
        return [p.data for p in super().parameters()]

    def load_state_arrays(self, arrays) -> None:
        params = super().parameters()
        if len(arrays) != len(params):
            raise ValueError(f"expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            if p.shape != tuple(np.shape(a)):
                raise ValueError(f"shape mismatch {p.shape} vs {np.shape(a)}")
            p.data = np.array(a, dtype=np.float64)

    def predict(self, X, time_feats, batch_size: int = 256) -> np.ndarray:
        outs = []
        with tc.no_grad():
            for i in range(0, len(X), batch_size):
                outs.append(self.forward(X[i:i + batch_size], time_feats[i:i + batch_size]).data)
        return np.concatenate(outs) if outs else np.zeros((0, self.cfg.H, self.cfg.d))

"""Fourier filtering, damped-oscillator reconstruction and the gated head."""
from __future__ import annotations

import numpy as np

from . import tensor as tc
from .layers import Linear, MLP3, Module
from .rng import Rng

# softplus(SOFTPLUS_ONE) == 1, so the time projector starts as the identity
SOFTPLUS_ONE = float(np.log(np.e - 1.0))


class SpectralFilter(Module):
    """Complex per-bin weights over ``n_freq = L//2 + 1`` bins.

    Only the first ``n_modes`` bins are learnable; the rest stay at the
    identity (1 + 0j).
    """

    def __init__(self, L: int, n_modes: int | None = None):
        self.n_freq = L // 2 + 1
        self.n_modes = self.n_freq // 2 if n_modes is None else int(n_modes)
        if not 0 <= self.n_modes <= self.n_freq:
            raise ValueError(f"n_modes must lie in [0, {self.n_freq}]")
        self.w_re = tc.parameter(np.ones(self.n_modes))
        self.w_im = tc.parameter(np.zeros(self.n_modes))

    def weights(self) -> tc.ComplexTensor:
        rest = self.n_freq - self.n_modes
        re = tc.concat([self.w_re, tc.Tensor(np.ones(rest))])
        im = tc.concat([self.w_im, tc.Tensor(np.zeros(rest))])
        return tc.ComplexTensor(re, im)


def fourier_filter(X, filt: SpectralFilter | tc.ComplexTensor) -> tc.Tensor:
    """``irfft(W * rfft(X))`` along the time axis of ``X[B, L, d]``."""
    X = tc.as_tensor(X)
    W = filt.weights() if isinstance(filt, SpectralFilter) else filt
    L = X.shape[1]
    if W.shape[-1] != L // 2 + 1:
        raise ValueError(f"filter has {W.shape[-1]} bins, series needs {L // 2 + 1}")
    xt = X.transpose(0, 2, 1)
    y = tc.irfft(tc.rfft(xt) * W, L)
    return y.transpose(0, 2, 1)


class LaplaceBasis(Module):
    """Projects encoder features onto ``K`` damped oscillators per variate."""

    def __init__(self, D: int, K: int, rng: Rng, hidden: int | None = None):
        if K < 1:
            raise ValueError("K must be >= 1")
        hidden = hidden or D
        n_freq = D // 2 + 1
        self.K = K
        self.proj_A = MLP3(D, hidden, K, rng)
        self.proj_alpha = MLP3(n_freq, hidden, K, rng)
        self.proj_omegaphi = MLP3(n_freq, hidden, 2 * K, rng)
        self.pi_slope = tc.parameter(np.array(SOFTPLUS_ONE))
        self.pi_bias = tc.parameter(np.array(0.0))

    def time_projector(self, t) -> tc.Tensor:
        return tc.softplus(self.pi_slope) * t + self.pi_bias


def decay_rate(raw) -> tc.Tensor:
    """``-|ELU(-raw)|``: equals ``-ELU(-raw)`` for ``raw <= 0`` and stays <= 0 elsewhere."""
    return tc.neg(tc.absolute(tc.elu(tc.neg(raw))))


def laplace_params(basis: LaplaceBasis, h, h_real, h_imag):
    """Amplitude, decay, frequency and phase, each shaped ``[B, d, K]``."""
    A = basis.proj_A(h)
    alpha = decay_rate(basis.proj_alpha(h_real))
    wp = basis.proj_omegaphi(h_imag)
    K = basis.K
    return A, alpha, wp[..., :K], wp[..., K:]


def time_anchors(H: int, K: int) -> np.ndarray:
    """Anchor grid ``t_k(s) = (s/H)(k/K)`` for steps s=1..H and bases k=1..K."""
    s = np.arange(1, H + 1)[:, None] / H
    k = np.arange(1, K + 1)[None, :] / K
    return s * k


def laplace_reconstruct(params, projector, H: int) -> tc.Tensor:
    """Sum of damped cosines, returned as ``[B, H, d]``.

    ``projector`` maps the anchor grid to projected time; pass ``None`` for
    the identity.
    """
    A, alpha, omega, phi = (tc.as_tensor(p) for p in params)
    K = A.shape[-1]
    t = tc.Tensor(time_anchors(H, K))
    pt = t if projector is None else projector(t)
    pt = pt.reshape((1, 1) + pt.shape)                     # [1, 1, H, K]
    A, alpha, omega, phi = (p.reshape(p.shape[:-1] + (1, K)) for p in (A, alpha, omega, phi))
    terms = A * tc.exp(alpha * pt) * tc.cos(omega * pt + phi)
    return terms.sum(axis=-1).transpose(0, 2, 1)


class GateBlend(Module):
    def __init__(self, D: int, H: int, rng: Rng):
        self.beta = tc.parameter(np.array(0.0))
        self.head = Linear(D, H, rng)

    def linear(self, h) -> tc.Tensor:
        """Per-variate map ``[B, d, D] -> [B, H, d]``."""
        return self.head(h).transpose(0, 2, 1)


def gated_blend(lin, lap, beta) -> tc.Tensor:
    lin, lap = tc.as_tensor(lin), tc.as_tensor(lap)
    if lin.shape != lap.shape:
        raise ValueError(f"blend shape mismatch: {lin.shape} vs {lap.shape}")
    g = tc.sigmoid(beta)
    return g * lin + (1.0 - g) * lap

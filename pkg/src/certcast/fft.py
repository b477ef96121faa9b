"""Arbitrary-length discrete Fourier transforms.

Mixed-radix decimation in time for lengths whose prime factors are small,
Bluestein's chirp-z algorithm for everything else. All transforms act on
the last axis and are vectorised over the leading ones.

Normalisation: the forward transform is unscaled and the inverse carries
1/n, so ``irfft(rfft(x), n) == x``.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np

# Largest prime handled by a direct p x p butterfly; bigger prime factors go
# through Bluestein.
MAX_DIRECT_RADIX = 31


def _smallest_factor(n: int) -> int:
    if n % 2 == 0:
        return 2
    f = 3
    while f * f <= n:
        if n % f == 0:
            return f
        f += 2
    return n


@lru_cache(maxsize=None)
def _dft_matrix(p: int) -> np.ndarray:
    k = np.arange(p)
    return np.exp(-2j * np.pi * np.outer(k, k) / p)


@lru_cache(maxsize=None)
def _twiddles(p: int, m: int) -> np.ndarray:
    # W_n^{r k} for r < p, k < m, n = p m
    r = np.arange(p)[:, None]
    k = np.arange(m)[None, :]
    return np.exp(-2j * np.pi * r * k / (p * m))


@lru_cache(maxsize=None)
def _bluestein_plan(n: int):
    m = 1
    while m < 2 * n - 1:
        m *= 2
    j = np.arange(n)
    # j^2 mod 2n keeps the chirp phase exact for large n
    chirp = np.exp(-1j * np.pi * ((j * j) % (2 * n)) / n)
    b = np.zeros(m, dtype=complex)
    b[:n] = np.conj(chirp)
    b[m - n + 1:] = np.conj(chirp[1:][::-1])
    return m, chirp, _fft_last(b)


def _bluestein(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    m, chirp, b_hat = _bluestein_plan(n)
    a = np.zeros(x.shape[:-1] + (m,), dtype=complex)
    a[..., :n] = x * chirp
    conv = _ifft_last(_fft_last(a) * b_hat)
    return conv[..., :n] * chirp


def _fft_last(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    if n == 1:
        return x.astype(complex, copy=True)
    p = _smallest_factor(n)
    if p > MAX_DIRECT_RADIX:
        return _bluestein(x)
    m = n // p
    if m == 1:
        return x @ _dft_matrix(p).T
    lead = x.shape[:-1]
    # sub[..., r, j] = x[..., j p + r]
    sub = np.swapaxes(x.reshape(lead + (m, p)), -1, -2)
    y = _fft_last(sub) * _twiddles(p, m)
    # X[q m + k] = sum_r W_p^{r q} y[r, k]
    out = np.einsum("qr,...rk->...qk", _dft_matrix(p), y)
    return out.reshape(lead + (n,))


def _ifft_last(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    return np.conj(_fft_last(np.conj(x))) / n


def fft(x, axis: int = -1) -> np.ndarray:
    x = np.moveaxis(np.asarray(x, dtype=complex), axis, -1)
    if x.shape[-1] == 0:
        raise ValueError("fft of an empty axis")
    return np.moveaxis(_fft_last(x), -1, axis)


def ifft(x, axis: int = -1) -> np.ndarray:
    x = np.moveaxis(np.asarray(x, dtype=complex), axis, -1)
    if x.shape[-1] == 0:
        raise ValueError("ifft of an empty axis")
    return np.moveaxis(_ifft_last(x), -1, axis)


def rfft(x, axis: int = -1) -> np.ndarray:
    """Non-negative frequency half of the DFT of a real signal (length n//2+1)."""
    x = np.moveaxis(np.asarray(x, dtype=np.float64), axis, -1)
    n = x.shape[-1]
    if n == 0:
        raise ValueError("rfft of an empty axis")
    out = _fft_last(x.astype(complex))[..., : n // 2 + 1]
    return np.moveaxis(out, -1, axis)


def irfft(spec, n: int, axis: int = -1) -> np.ndarray:
    """Inverse of :func:`rfft`.

    Imaginary parts of the DC bin (and of the Nyquist bin for even ``n``)
    are ignored, as they cannot come from a real signal.
    """
    if n < 1:
        raise ValueError("irfft needs n >= 1")
    spec = np.moveaxis(np.asarray(spec, dtype=complex), axis, -1)
    nf = n // 2 + 1
    if spec.shape[-1] != nf:
        raise ValueError(f"irfft: expected {nf} bins for n={n}, got {spec.shape[-1]}")
    full = np.zeros(spec.shape[:-1] + (n,), dtype=complex)
    full[..., :nf] = spec
    full[..., 0] = spec[..., 0].real
    if n % 2 == 0:
        full[..., n // 2] = spec[..., n // 2].real
    tail = np.conj(spec[..., 1:(n + 1) // 2])
    full[..., n - tail.shape[-1]:] = tail[..., ::-1]
    out = _ifft_last(full).real
    return np.moveaxis(out, -1, axis)


def hermitian_weights(n: int) -> np.ndarray:
    """Multiplicity of each rfft bin in the full spectrum of a length-n signal."""
    w = np.full(n // 2 + 1, 2.0)
    w[0] = 1.0
    if n % 2 == 0:
        w[-1] = 1.0
    return w


def naive_dft(x) -> np.ndarray:
    """O(n^2) reference DFT over the last axis; used as a test oracle."""
    x = np.asarray(x, dtype=complex)
    n = x.shape[-1]
    k = np.arange(n)
    mat = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return x @ mat.T

import numpy as np
import pytest
from hypothesis import given, strategies as st

from certcast import fft


@pytest.mark.parametrize("n", [1, 2, 3, 7, 8, 12, 96, 97, 100, 127, 128, 210])
def test_fft_matches_naive_dft(n):
    rng = np.random.default_rng(n)
    x = rng.normal(size=(3, n)) + 1j * rng.normal(size=(3, n))
    np.testing.assert_allclose(fft.fft(x), fft.naive_dft(x), atol=1e-9 * max(n, 1))


@pytest.mark.parametrize("n", [1, 2, 5, 8, 9, 96, 100, 101])
def test_rfft_irfft_round_trip(n):
    x = np.random.default_rng(n).normal(size=(4, n))
    spec = fft.rfft(x)
    assert spec.shape == (4, n // 2 + 1)
    np.testing.assert_allclose(spec, fft.naive_dft(x)[:, : n // 2 + 1], atol=1e-9)
    np.testing.assert_allclose(fft.irfft(spec, n), x, atol=1e-10)


def test_axis_argument():
    x = np.random.default_rng(0).normal(size=(5, 12, 3))
    np.testing.assert_allclose(fft.rfft(x, axis=1), np.moveaxis(fft.rfft(np.moveaxis(x, 1, -1)), -1, 1))


def test_known_values():
    np.testing.assert_allclose(fft.fft(np.array([1.0, 0, 0, 0])), np.ones(4))
    np.testing.assert_allclose(fft.fft(np.ones(5)), [5, 0, 0, 0, 0], atol=1e-12)
    np.testing.assert_allclose(fft.rfft(np.array([1.0, -1.0, 1.0, -1.0])), [0, 0, 4], atol=1e-12)


def test_hermitian_weights():
    np.testing.assert_array_equal(fft.hermitian_weights(8), [1, 2, 2, 2, 1])
    np.testing.assert_array_equal(fft.hermitian_weights(7), [1, 2, 2, 2])
    for n in (1, 6, 9):
        assert fft.hermitian_weights(n).sum() == n


@given(st.integers(1, 160), st.integers(0, 2**31 - 1))
def test_parseval_and_inverse(n, seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=n) + 1j * rng.normal(size=n)
    X = fft.fft(x)
    energy = np.sum(np.abs(x) ** 2)
    assert abs(energy - np.sum(np.abs(X) ** 2) / n) <= 1e-9 * energy
    np.testing.assert_allclose(fft.ifft(X), x, atol=1e-10)


@given(st.integers(2, 120), st.integers(0, 2**31 - 1))
def test_real_parseval_with_weights(n, seed):
    x = np.random.default_rng(seed).normal(size=n)
    spec = fft.rfft(x)
    assert np.isclose(np.sum(x * x), np.sum(fft.hermitian_weights(n) * np.abs(spec) ** 2) / n, rtol=1e-10)

import numpy as np
import pytest

from certcast import tensor as tc
from certcast.encoder import EncoderConfig, InvertedEncoder, embed_inverted, encode
from certcast.rng import Rng


def _enc(L=12, d=4, D=8, heads=2, seed=0):
    return InvertedEncoder(L, d, EncoderConfig(D, 2, heads, 2), Rng(seed))


def test_shapes_and_attention_rows():
    enc = _enc()
    X = np.random.default_rng(0).normal(size=(3, 12, 4))
    feats = np.random.default_rng(1).uniform(size=(3, 2))
    E = embed_inverted(X, enc, feats)
    assert E.shape == (3, 4, 8)
    attn = enc.layers[0].attention_weights(E).data
    assert attn.shape == (3, 2, 4, 4)
    np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-12)
    assert encode(X, enc, feats).shape == (3, 4, 8)


def test_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(D=10, heads=4)
    with pytest.raises(ValueError):
        EncoderConfig(n_layers=0)


def test_lookback_mismatch_raises():
    with pytest.raises(ValueError):
        embed_inverted(np.zeros((1, 10, 4)), _enc(), np.zeros((1, 2)))


def test_same_seed_same_output():
    X = np.random.default_rng(0).normal(size=(2, 12, 4))
    f = np.zeros((2, 2))
    np.testing.assert_array_equal(encode(X, _enc(seed=3), f).data, encode(X, _enc(seed=3), f).data)


def test_layer_output_is_normalised():
    X = np.random.default_rng(5).normal(size=(2, 12, 4)) * 10
    out = encode(X, _enc(), np.zeros((2, 2))).data
    np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-10)

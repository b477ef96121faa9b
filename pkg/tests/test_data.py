import numpy as np
import pytest
from hypothesis import given, strategies as st

from certcast import constraints as cons
from certcast import data
from certcast import tensor as tc
from certcast.spectral import laplace_reconstruct


def _csv(tmp_path, text, name="s.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_csv_with_dates(tmp_path):
    s = data.load_csv(_csv(tmp_path, "date,a,b\n2020-01-01 00:00,1,2\n2020-01-01 01:00,3,4\n"))
    assert s.names == ["a", "b"]
    np.testing.assert_array_equal(s.values, [[1, 2], [3, 4]])
    assert s.timestamps[1] - s.timestamps[0] == 3600.0


def test_load_csv_drops_missing_rows(tmp_path, caplog):
    s = data.load_csv(_csv(tmp_path, "a,b\n1,2\n,3\n4,nan\n5,6\n"))
    assert s.dropped_rows == 2 and s.T == 2 and s.timestamps is None
    assert "dropped 2 rows" in caplog.text


@pytest.mark.parametrize("text", ["", "a,b\n1\n", "a,b\n1,x\n", "a\n\n", "date\n2020-01-01\n"])
def test_load_csv_errors(tmp_path, text):
    with pytest.raises(ValueError):
        data.load_csv(_csv(tmp_path, text))


def test_csv_round_trip(tmp_path):
    s = data.synth_generate("sine", 3, 80, 0)
    data.save_csv(s, tmp_path / "x.csv")
    back = data.load_csv(tmp_path / "x.csv")
    np.testing.assert_array_equal(back.values, s.values)


def test_split_bounds_and_counts():
    assert data.split_bounds(1000) == [(0, 700), (700, 800), (800, 1000)]
    assert data.window_count(100, 10, 5) == 86
    assert data.window_count(10, 10, 5) == 0
    with pytest.raises(ValueError):
        data.split_bounds(10, (0.5, 0.5, 0.5))


@given(st.integers(40, 300), st.integers(2, 12), st.integers(1, 8))
def test_windows_match_enumeration(T, L, H):
    vals = np.arange(T, dtype=np.float64)[:, None] * np.array([1.0, -2.0])
    s = data.RawSeries(["a", "b"], vals)
    if T < L + H:
        with pytest.raises(ValueError):
            data.window_split(s, L, H)
        return
    ds = data.window_split(s, L, H)
    z = ds.norm.normalize(vals)
    for name, (lo, hi) in zip(data.SPLITS, data.split_bounds(T)):
        b = ds.split(name)
        assert len(b) == data.window_count(hi - lo, L, H)
        for i, st0 in enumerate(b.starts):
            assert lo <= st0 and st0 + L + H <= hi
            np.testing.assert_array_equal(b.X[i], z[st0:st0 + L])
            np.testing.assert_array_equal(b.Y[i], z[st0 + L:st0 + L + H])
    assert ds.train.starts.max(initial=-1) < ds.val.starts.min(initial=T)


def test_normalisation_uses_train_only_and_inverts():
    s = data.synth_generate("trend", 2, 500, 1)
    ds = data.window_split(s, 24, 12)
    train = s.values[:350]
    np.testing.assert_allclose(ds.norm.mean, train.mean(axis=0))
    np.testing.assert_allclose(ds.norm.denormalize(ds.norm.normalize(s.values)), s.values, atol=1e-12)
    cal = cons.calibrate(ds.train.X, ds.train.Y)
    cal2 = cons.calibrate(data.window_split(data.RawSeries(s.names, s.values[:350] * 1.0), 24, 12,
                                            (1.0, 0.0, 0.0)).train.X, ds.train.Y)
    assert cal["mu_diff"] == pytest.approx(cal2["mu_diff"])


def test_constant_variate_is_floored(caplog):
    vals = np.random.default_rng(0).normal(size=(200, 2))
    vals[:, 1] = 4.0
    ds = data.window_split(data.RawSeries(["a", "b"], vals), 16, 8)
    assert ds.norm.floored.tolist() == [False, True]
    assert np.all(np.isfinite(ds.train.X)) and np.all(ds.train.X[..., 1] == 0.0)
    assert "std floor" in caplog.text


def test_time_features():
    s = data.synth_generate("sine", 1, 200, 0)
    s.timestamps = np.concatenate([np.arange(100.0), 100 + 2 * np.arange(100.0)])
    ds = data.window_split(s, 10, 5)
    np.testing.assert_allclose(ds.train.feats[0], [0.0, 1.0])
    last = ds.test.feats[-1]
    assert last[1] == pytest.approx(2.0) and last[0] == ds.test.starts[-1] / 200


def test_synth_sine_closed_form():
    s = data.synth_generate("sine", 2, 100, 3, noise=0.0)
    p = s.meta["sine"]
    t = np.arange(100.0)
    ref = (p["amps"][None] * np.sin(2 * np.pi * t[:, None, None] / p["periods"][None] + p["phases"][None])).sum(-1)
    np.testing.assert_allclose(s.values, ref, atol=1e-12)


def test_synth_damped_matches_basis_reconstruction():
    s = data.synth_generate("damped", 2, 128, 4, noise=0.0)
    p = s.meta["damped"]
    params = [p[k][None] for k in ("A", "alpha", "omega", "phi")]
    np.testing.assert_allclose(laplace_reconstruct(params, None, 128).data[0], s.values, atol=1e-10)


def test_synth_validation():
    with pytest.raises(ValueError):
        data.synth_generate("zigzag", 1, 100, 0)
    with pytest.raises(ValueError):
        data.synth_generate("sine", 1, 10, 0)
    a = data.synth_generate("mixture", 3, 100, 9)
    np.testing.assert_array_equal(a.values, data.synth_generate("mixture", 3, 100, 9).values)


def test_add_noise_properties():
    ds = data.window_split(data.synth_generate("sine", 2, 2000, 0), 32, 8)
    b = ds.test
    same = data.add_noise(b, 0.0, 1)
    np.testing.assert_array_equal(same.X, b.X)
    n1, n2 = data.add_noise(b, 0.05, 1), data.add_noise(b, 0.10, 1)
    np.testing.assert_array_equal(n1.Y, b.Y)
    np.testing.assert_allclose((n2.X - b.X), 2 * (n1.X - b.X), atol=1e-12)
    resid = (n2.X - b.X).ravel() / 0.10
    assert resid.size > 1e4 and abs(resid.std() - 1.0) < 0.05
    with pytest.raises(ValueError):
        data.add_noise(b, -1.0, 0)


def test_dataset_cache_round_trip(tmp_path):
    ds = data.window_split(data.synth_generate("mixture", 2, 300, 0), 16, 8)
    ds.save(tmp_path / "ds.bin")
    back = data.WindowedDataset.load(tmp_path / "ds.bin")
    for name in data.SPLITS:
        a, b = ds.split(name), back.split(name)
        for f in ("X", "Y", "feats", "starts"):
            np.testing.assert_array_equal(getattr(a, f), getattr(b, f))
    with pytest.raises(ValueError):
        ds.split("holdout")

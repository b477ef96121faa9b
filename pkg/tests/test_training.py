import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from certcast import data
from certcast import training as tr
from certcast.model import Forecaster, ModelConfig

vectors = st.integers(1, 12).flatmap(
    lambda n: st.tuples(arrays(np.float64, n, elements=st.floats(-10, 10)),
                        arrays(np.float64, n, elements=st.floats(-10, 10))))


def _tiny(seed=0):
    ds = data.window_split(data.synth_generate("mixture", 2, 700, seed), 24, 12)
    return ds, Forecaster(ModelConfig(L=24, H=12, d=2, D=8, heads=2, K=3, seed=seed))


def test_schedules():
    assert tr.alpha_schedule(0, 0, 11) == 0.5
    assert tr.alpha_schedule(0, 10, 11) == pytest.approx(0.1)
    assert tr.alpha_schedule(3, 0, 11) == 0.1
    assert tr.lambda_schedule(0, 10) == 1.0
    assert tr.lambda_schedule(9, 10) == pytest.approx(0.3)
    assert tr.lambda_schedule(0, 1) == 1.0


def test_sample_weights():
    np.testing.assert_allclose(tr.sample_weights([0.0, 0.0], 0.5), [1.0, 1.0])
    np.testing.assert_allclose(tr.sample_weights([1.0, 3.0], 0.5), [1.25, 1.75])
    np.testing.assert_allclose(tr.sample_weights([0.4, 0.4, 0.4], 0.5), 1.5)
    assert tr.sample_weights([100.0] + [0.0] * 99, 0.5)[0] == 3.0
    assert tr.sample_weights([0.0, 1000.0], 0.5).max() <= tr.WEIGHT_MAX
    with pytest.raises(ValueError):
        tr.sample_weights([-1.0], 0.5)


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(0, 100)), st.floats(0, 1))
def test_sample_weights_bounded_and_monotone(v, alpha):
    w = tr.sample_weights(v, alpha)
    assert np.all(w >= tr.WEIGHT_MIN) and np.all(w <= tr.WEIGHT_MAX)
    order = np.argsort(v, kind="stable")
    assert np.all(np.diff(w[order]) >= 0)


def test_pcgrad_examples():
    g, gp, info = tr.pcgrad_combine(np.array([1.0, 0.0]), np.array([-1.0, 1.0]), 1.0)
    np.testing.assert_allclose(gp, [0.0, 1.0])
    np.testing.assert_allclose(g, [1.0, 1.0])
    assert info.projected and info.dot_before == -1.0 and info.dot_after == 0.0
    g, gp, info = tr.pcgrad_combine(np.array([1.0, 0.0]), np.array([1.0, 1.0]), 0.5)
    np.testing.assert_allclose(g, [1.5, 0.5])
    assert not info.projected
    g, gp, _ = tr.pcgrad_combine(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.7)
    np.testing.assert_allclose(g, [1.0, 0.7])
    g, gp, _ = tr.pcgrad_combine(np.array([2.0, -1.0]), np.array([-2.0, 1.0]), 0.7)
    np.testing.assert_allclose(gp, 0.0, atol=1e-15)
    np.testing.assert_allclose(g, [2.0, -1.0])
    _, _, info = tr.pcgrad_combine(np.zeros(2), -np.ones(2), 1.0)
    assert info.skipped is False and not info.projected
    _, gp, info = tr.pcgrad_combine(np.zeros(2), np.array([1.0, 1.0]), 1.0)
    assert not info.skipped
    with pytest.raises(ValueError):
        tr.pcgrad_combine(np.zeros(2), np.zeros(3), 1.0)


@given(vectors, st.floats(0, 2))
def test_pcgrad_properties(pair, lam):
    gm, gc = pair
    _, gp, info = tr.pcgrad_combine(gm, gc, lam)
    scale = max(1.0, float(np.linalg.norm(gm) * np.linalg.norm(gc)))
    assert info.dot_after >= -1e-12 * scale
    assert info.con_norm_after <= info.con_norm_before * (1 + 1e-12) + 1e-300


def test_adaptive_lr_and_multiplier():
    s = tr.TrainState(eta_base=1e-3, epsilon_target=0.1, ema_violation=0.1)
    assert tr.adaptive_lr(s) == pytest.approx(1e-3)
    s.ema_violation = 0.2
    assert tr.adaptive_lr(s) == pytest.approx(5e-4)
    s.ema_violation = 100.0
    assert tr.adaptive_lr(s) == pytest.approx(1e-3 * tr.RATIO_MIN)
    s.ema_violation = 0.0
    assert tr.adaptive_lr(s) == pytest.approx(1e-3 * tr.RATIO_MAX)
    s.ema_mse = 2.0
    assert tr.loss_multiplier(1.0, s, 1.0) == pytest.approx(0.5)
    assert tr.total_loss(1.0, 0.4, s, 1.0) == pytest.approx(1.2)
    with pytest.raises(ValueError):
        tr.total_loss(float("nan"), 0.0, s, 1.0)


def test_update_emas():
    s = tr.TrainState(eta_base=1.0, ema_violation=0.1)
    tr.update_emas(s, 1.1, 4.0)
    assert s.ema_violation == pytest.approx(0.2) and s.ema_mse == 4.0
    tr.update_emas(s, 0.2, 2.0)
    assert s.ema_mse == pytest.approx(3.8)


def test_config_validation():
    with pytest.raises(ValueError):
        tr.OptimizerConfig(eta_base=0)
    with pytest.raises(ValueError):
        tr.OptimizerConfig(alpha_start=0.1, alpha_end=0.5)


def test_linear_toy_step_reduces_loss():
    ds, _ = _tiny()
    cfg = ModelConfig(L=24, H=12, d=2, D=8, heads=2, K=3, spectral=False)
    model = Forecaster(cfg)
    b = ds.train.subset(slice(0, 16))
    before = float(np.mean((model.predict(b.X, b.feats) - b.Y) ** 2))
    ds1 = data.WindowedDataset(24, 12, b, b, b, ds.norm)
    tr.fit(model, ds1, tr.OptimizerConfig(eta_base=1e-3, epochs=1, batch_size=16, cert_windows=0,
                                          constrained=False))
    after = float(np.mean((model.predict(b.X, b.feats) - b.Y) ** 2))
    assert after < before


def test_fit_history_and_determinism():
    runs = []
    for _ in range(2):
        ds, model = _tiny()
        res = tr.fit(model, ds, tr.OptimizerConfig(eta_base=0.05, epochs=2, batch_size=32, cert_windows=3))
        runs.append((res, model.state_arrays()))
    (r1, p1), (r2, p2) = runs
    assert r1.history == r2.history
    for a, b in zip(p1, p2):
        assert a.tobytes() == b.tobytes()
    h = r1.history[-1]
    assert h["epoch"] == 2 and 0 <= h["csr_soft"] <= 1 and h["cert_rate"] is not None
    assert h["lambda"] == pytest.approx(0.3) and h["alpha"] == pytest.approx(0.1)
    assert all(math.isfinite(r.loss) for r in r1.steps)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_raises():
    ds, model = _tiny()
    with pytest.raises(tr.TrainingDiverged):
        tr.fit(model, ds, tr.OptimizerConfig(eta_base=1e200, epochs=3, batch_size=8, cert_windows=0,
                                             clip_norm=1e300))


def test_empty_train_split_rejected():
    ds, model = _tiny()
    empty = ds.train.subset(slice(0, 0))
    with pytest.raises(ValueError):
        tr.fit(model, data.WindowedDataset(24, 12, empty, ds.val, ds.test, ds.norm), tr.OptimizerConfig())

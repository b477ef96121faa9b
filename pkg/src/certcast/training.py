"""Constraint-aware training: sample reweighting, gradient surgery, adaptive step size."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import certification as cert
from . import constraints as cons
from . import tensor as tc
from .data import SeriesBatch, WindowedDataset
from .manifold import geometry
from .model import Forecaster
from .rng import Rng

log = logging.getLogger(__name__)

WEIGHT_MIN, WEIGHT_MAX = 0.5, 3.0
RATIO_MIN, RATIO_MAX = 0.5, 2.0
EMA_MOMENTUM = 0.9


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    eta_base: float = 1e-4
    epochs: int = 10
    batch_size: int = 32
    lambda_start: float = 1.0
    lambda_end: float = 0.3
    alpha_start: float = 0.5
    alpha_end: float = 0.1
    epsilon_target: float = 0.1
    clip_norm: float = 10.0
    seed: int = 0
    constrained: bool = True
    cert_windows: int = 32

    def __post_init__(self):
        if self.eta_base <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("eta_base, epochs and batch_size must be positive")
        if not self.alpha_start >= self.alpha_end >= 0:
            raise ValueError("alpha schedule must decay from alpha_start to alpha_end")
        if not self.lambda_start >= self.lambda_end >= 0:
            raise ValueError("lambda schedule must decay from lambda_start to lambda_end")
        if self.epsilon_target <= 0 or self.clip_norm <= 0:
            raise ValueError("epsilon_target and clip_norm must be positive")


@dataclass
class TrainState:
    eta_base: float
    epsilon_target: float = 0.1
    ema_violation: float = 0.1
    ema_mse: float | None = None
    epoch: int = 0
    step: int = 0
    alpha: float = 0.5
    lam: float = 1.0
    eta: float = 0.0


# -- schedules ------------------------------------------------------------------

def alpha_schedule(epoch: int, step_in_epoch: int, steps_per_epoch: int,
                   start: float = 0.5, end: float = 0.1) -> float:
    """Linear from ``start`` to ``end`` across the first epoch, flat afterwards."""
    if epoch > 0:
        return end
    frac = step_in_epoch / max(steps_per_epoch - 1, 1)
    return start + (end - start) * min(frac, 1.0)


def lambda_schedule(epoch: int, epochs: int, start: float = 1.0, end: float = 0.3) -> float:
    frac = epoch / max(epochs - 1, 1)
    return start + (end - start) * min(frac, 1.0)


# -- the three mechanisms ---------------------------------------------------------

def sample_weights(violations, alpha: float) -> np.ndarray:
    v = np.asarray(violations, dtype=np.float64)
    if np.any(v < 0):
        raise ValueError("violations must be nonnegative")
    m = v.mean() if v.size else 0.0
    if m <= 0:
        return np.ones_like(v)
    return np.clip(1.0 + alpha * v / m, WEIGHT_MIN, WEIGHT_MAX)


@dataclass(frozen=True)
class PCGradInfo:
    dot_before: float
    dot_after: float
    con_norm_before: float
    con_norm_after: float
    projected: bool
    skipped: bool


def pcgrad_combine(g_mse, g_con, lam: float):
    """Drop the component of ``g_con`` opposing ``g_mse``, then add ``lam`` times it."""
    g_mse = np.asarray(g_mse, dtype=np.float64)
    g_con = np.asarray(g_con, dtype=np.float64)
    if g_mse.shape != g_con.shape:
        raise ValueError("gradients must cover the same parameters")
    dot = float(g_mse @ g_con)
    nm2 = float(g_mse @ g_mse)
    projected = skipped = False
    g_proj = g_con
    if dot < 0:
        if nm2 > 0:
            g_proj = g_con - (dot / nm2) * g_mse
            projected = True
        else:
            skipped = True
            log.debug("pcgrad: zero primary gradient with negative dot, projection skipped")
    info = PCGradInfo(dot, float(g_mse @ g_proj), math.sqrt(float(g_con @ g_con)),
                      math.sqrt(float(g_proj @ g_proj)), projected, skipped)
    return g_mse + lam * g_proj, g_proj, info


def adaptive_lr(state: TrainState) -> float:
    ema = state.ema_violation
    ratio = RATIO_MAX if ema <= 0 else min(max(state.epsilon_target / ema, RATIO_MIN), RATIO_MAX)
    return state.eta_base * ratio


def loss_multiplier(mse_value: float, state: TrainState, lam_base: float) -> float:
    ema = state.ema_mse if state.ema_mse else mse_value
    ratio = 1.0 if ema <= 0 else min(max(mse_value / ema, RATIO_MIN), RATIO_MAX)
    return lam_base * ratio


def total_loss(mse_weighted, c_total, state: TrainState, lam_base: float | None = None):
    """``mse + lam_eff * C``; accepts floats or tensors."""
    lam_base = state.lam if lam_base is None else lam_base
    mval = mse_weighted.item() if isinstance(mse_weighted, tc.Tensor) else float(mse_weighted)
    cval = c_total.data if isinstance(c_total, tc.Tensor) else np.asarray(c_total)
    if not (math.isfinite(mval) and np.all(np.isfinite(cval))):
        raise ValueError("loss terms must be finite")
    return mse_weighted + loss_multiplier(mval, state, lam_base) * c_total


def update_emas(state: TrainState, mean_violation: float, mse_value: float) -> None:
    state.ema_violation = EMA_MOMENTUM * state.ema_violation + (1 - EMA_MOMENTUM) * mean_violation
    if state.ema_mse is None:
        state.ema_mse = mse_value
    else:
        state.ema_mse = EMA_MOMENTUM * state.ema_mse + (1 - EMA_MOMENTUM) * mse_value


def _clip(g: np.ndarray, max_norm: float) -> tuple[np.ndarray, bool]:
    n = float(np.linalg.norm(g))
    if n > max_norm:
        return g * (max_norm / n), True
    return g, False


def _flat(grads) -> np.ndarray:
    return np.concatenate([g.ravel() for g in grads]) if grads else np.zeros(0)


# -- fit ---------------------------------------------------------------------------

@dataclass
class StepRecord:
    step: int
    loss: float
    mse: float
    eta: float
    pcgrad: PCGradInfo | None
    clipped_mse: bool
    clipped_con: bool


@dataclass
class FitResult:
    history: list[dict]
    steps: list[StepRecord]
    state: TrainState
    dbar: float
    calibration: cons.ThresholdCalibration


def per_sample_sq_error(Xhat: tc.Tensor, Y: np.ndarray) -> tc.Tensor:
    diff = Xhat - Y
    return (diff * diff).sum(axis=(1, 2))


def evaluate_split(model: Forecaster, batch: SeriesBatch, cal: cons.ThresholdCalibration,
                   dbar: float, epsilon: float, geo, cert_windows: int | None = None,
                   delta: float = cert.DELTA, predictions: np.ndarray | None = None) -> dict:
    """MSE, MAE, CSR and certification numbers on one split."""
    pred = model.predict(batch.X, batch.feats) if predictions is None else predictions
    err = pred - batch.Y
    stats = cons.InputStats.from_input(batch.X)
    with tc.no_grad():
        totals = cons.total_violation(cons.violations(pred, stats, batch.Y, cal, dbar, epsilon, geo).data)
    c = cons.csr(totals, epsilon)
    n = len(batch) if cert_windows is None else min(cert_windows, len(batch))
    out = {"mse": float(np.mean(err ** 2)), "mae": float(np.mean(np.abs(err))),
           "csr_hard": c.csr_hard, "csr_soft": c.csr_soft}
    if n > 0:
        st = cert.ProofSettings(cal, dbar, epsilon, delta, geo)
        certs, _ = cert.certify_batch(pred[:n], batch.X[:n], batch.Y[:n], st)
        s = cert.certification_rate(certs)
        out.update(cert_rate=s.cert_rate, proof_len_mean=s.proof_len_mean,
                   cert_time_ms_mean=s.cert_time_ms_mean)
    return out


def fit(model: Forecaster, dataset: WindowedDataset, cfg: OptimizerConfig, hyperbolic: bool = True,
        epsilon: float = 0.1, delta: float = cert.DELTA, step_hook=None,
        max_steps: int | None = None) -> FitResult:
    """Mini-batch training; calibration uses the train split only."""
    geo = geometry(hyperbolic)
    train = dataset.train
    if len(train) == 0:
        raise ValueError("training split has no windows")
    cal = cons.calibrate(train.X, train.Y)
    stats_all = cons.InputStats.from_input(train.X)
    params = model.parameters()
    state = TrainState(cfg.eta_base, cfg.epsilon_target, cfg.epsilon_target)
    dbar = cons.RunningDistance(EMA_MOMENTUM)
    root = Rng(cfg.seed).spawn("shuffle")
    n = len(train)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    history: list[dict] = []
    records: list[StepRecord] = []

    for epoch in range(cfg.epochs):
        state.epoch = epoch
        state.lam = lambda_schedule(epoch, cfg.epochs, cfg.lambda_start, cfg.lambda_end)
        order = root.spawn(epoch).permutation(n)
        sq_sum, count, conflicts, clips = 0.0, 0, 0, 0
        for i in range(steps_per_epoch):
            if max_steps is not None and state.step >= max_steps:
                break
            idx = order[i * cfg.batch_size:(i + 1) * cfg.batch_size]
            state.alpha = alpha_schedule(epoch, i, steps_per_epoch, cfg.alpha_start, cfg.alpha_end)
            rec = _train_step(model, params, train.subset(idx), _rows(stats_all, idx), cal, state,
                              dbar, cfg, geo, epsilon)
            records.append(rec)
            if rec.pcgrad is not None and rec.pcgrad.projected:
                conflicts += 1
            clips += int(rec.clipped_mse) + int(rec.clipped_con)
            sq_sum += rec.mse
            count += 1
            if step_hook is not None:
                step_hook(rec)
        val = dataset.val if len(dataset.val) else train
        metrics = evaluate_split(model, val, cal, dbar.value, epsilon, geo, cfg.cert_windows, delta)
        entry = {"epoch": epoch + 1, "train_mse": sq_sum / max(count, 1),
                 "val_mse": metrics["mse"], "val_mae": metrics["mae"],
                 "csr_hard": metrics["csr_hard"], "csr_soft": metrics["csr_soft"],
                 "cert_rate": metrics.get("cert_rate"),
                 "alpha": state.alpha, "lambda": state.lam, "eta": state.eta, "dbar": dbar.value,
                 "pcgrad_conflicts": conflicts, "clip_events": clips}
        history.append(entry)
        log.info("epoch %d val_mse %.5f csr_hard %.3f", epoch + 1, metrics["mse"], metrics["csr_hard"])
        if max_steps is not None and state.step >= max_steps:
            break
    return FitResult(history, records, state, dbar.value, cal)


def _rows(stats: cons.InputStats, idx) -> cons.InputStats:
    pick = (lambda a: None if a is None else a[idx])
    return cons.InputStats(stats.last[idx], pick(stats.trend), pick(stats.var))


def _train_step(model, params, batch: SeriesBatch, stats, cal, state: TrainState,
                dbar: cons.RunningDistance, cfg: OptimizerConfig, geo, epsilon: float) -> StepRecord:
    B = len(batch)
    try:
        Xhat = model(batch.X, batch.feats)
        sq = per_sample_sq_error(Xhat, batch.Y)
        if cfg.constrained:
            dist = cons.target_distance(Xhat, batch.Y, geo)
            v = cons.violations(Xhat, stats, batch.Y, cal, dbar.value, epsilon, geo, dist=dist)
            c_b = cons.total_violation(v)
            weights = sample_weights(c_b.data, state.alpha)
            mse_w = (sq * weights).sum() * (1.0 / B)
            g_mse = _flat(tc.grad(mse_w, params, retain_graph=True))
            g_con = _flat(tc.grad(c_b.sum(), params))
        else:
            mse_w = sq.sum() * (1.0 / B)
            g_mse = _flat(tc.grad(mse_w, params))
    except tc.NonFiniteError as exc:
        raise TrainingDiverged(f"step {state.step}: {exc}") from exc
    mse_value = mse_w.item()
    if not math.isfinite(mse_value) or not np.all(np.isfinite(g_mse)):
        raise TrainingDiverged(f"step {state.step}: non-finite loss or gradient")

    g_mse, clip_m = _clip(g_mse, cfg.clip_norm)
    if cfg.constrained:
        if not np.all(np.isfinite(g_con)):
            raise TrainingDiverged(f"step {state.step}: non-finite constraint gradient")
        g_con, clip_c = _clip(g_con, cfg.clip_norm)
        if state.ema_mse is None:
            state.ema_mse = mse_value
        lam_eff = loss_multiplier(mse_value, state, state.lam)
        combined, _, info = pcgrad_combine(g_mse, g_con, lam_eff)
        state.eta = adaptive_lr(state)
        update_emas(state, float(c_b.data.mean()), mse_value)
        dbar.update(float(dist.data.mean()))
        loss = mse_value + lam_eff * float(c_b.data.sum())
    else:
        clip_c, info = False, None
        combined = g_mse
        state.eta = cfg.eta_base
        loss = mse_value
    if clip_m or clip_c:
        log.debug("step %d: gradient clipped (mse=%s, con=%s)", state.step, clip_m, clip_c)

    off = 0
    for p in params:
        k = p.data.size
        p.data = p.data - state.eta * combined[off:off + k].reshape(p.data.shape)
        off += k
    state.step += 1
    mse_plain = float(sq.data.mean()) / batch.Y[0].size
    return StepRecord(state.step, float(loss), mse_plain, state.eta, info, clip_m, clip_c)

"""Logical and heuristic forecast constraints, calibration, and CSR metrics.

Series are ``[B, T, d]``. Each statistic is computed per variate; each
constraint is evaluated per variate and averaged over variates, giving one
value per window. A constraint whose statistic needs more time steps than the
horizon has is inert (returns 0).
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import tensor as tc
from .manifold import PoincareBall

SIGMA_FLOOR = 1e-8
VAR_FLOOR = 1e-8
MIN_RELIABLE = 32
SCALES = (1, 4, 8)
EPS = 1e-12
N_CONSTRAINTS = 8
NAMES = ("target", "gradient", "scale", "boundary", "trend", "autocorr", "multiscale", "dynamic")


# -- per-variate statistics (time on the last axis) ---------------------------

def _diff(x: tc.Tensor) -> tc.Tensor:
    return x[..., 1:] - x[..., :-1]


def lsq_slope(x: tc.Tensor) -> tc.Tensor:
    n = x.shape[-1]
    t = np.arange(n, dtype=np.float64)
    t -= t.mean()
    return (x * (t / max(float(t @ t), EPS))).sum(axis=-1)


def lag1_autocorr(x: tc.Tensor) -> tc.Tensor:
    a, b = x[..., :-1], x[..., 1:]
    a = a - a.mean(axis=-1, keepdims=True)
    b = b - b.mean(axis=-1, keepdims=True)
    num = (a * b).sum(axis=-1)
    den = tc.sqrt(((a * a).sum(axis=-1) + EPS) * ((b * b).sum(axis=-1) + EPS))
    return num / den


def scale_gradient(x: tc.Tensor, s: int) -> tc.Tensor:
    """Mean absolute step between consecutive stride-``s`` block means."""
    n = x.shape[-1]
    m = n // s
    blocks = x[..., :m * s].reshape(*x.shape[:-1], m, s).mean(axis=-1)
    return tc.absolute(_diff(blocks)).mean(axis=-1)


def floored_var(x: tc.Tensor) -> tc.Tensor:
    return tc.clamp(x.var(axis=-1), lo=VAR_FLOOR)


def floored_std(x: tc.Tensor) -> tc.Tensor:
    return tc.sqrt(floored_var(x))


def _np_stat(fn, x: np.ndarray, *args) -> np.ndarray:
    with tc.no_grad():
        return fn(tc.Tensor(x), *args).data


# -- calibration --------------------------------------------------------------

@dataclass
class ThresholdCalibration:
    values: dict = field(default_factory=dict)
    reliable: dict = field(default_factory=dict)

    def __getitem__(self, key: str) -> float:
        return self.values[key]

    def ok(self, key: str) -> bool:
        return bool(self.reliable.get(key, False))

    def to_text(self) -> str:
        return "".join(f"{k} {v:.17g} {int(self.ok(k))}\n" for k, v in self.values.items())

    @classmethod
    def from_text(cls, text: str) -> "ThresholdCalibration":
        cal = cls()
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            name, value, flag = line.split()
            cal.values[name] = float(value)
            cal.reliable[name] = flag == "1"
        return cal

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "ThresholdCalibration":
        with open(path) as fh:
            return cls.from_text(fh.read())


def _moments(x: np.ndarray) -> tuple[float, float, bool]:
    mu = float(np.mean(x)) if x.size else 0.0
    sd = float(np.std(x)) if x.size else 0.0
    ok = x.size >= MIN_RELIABLE and sd >= SIGMA_FLOOR
    return mu, max(sd, SIGMA_FLOOR), ok


def _pct(x: np.ndarray, q: float) -> float:
    return float(np.percentile(x, q)) if x.size else 0.0


def calibrate(X: np.ndarray, Y: np.ndarray) -> ThresholdCalibration:
    """Thresholds from training windows ``X[N, L, d]`` and targets ``Y[N, H, d]``."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("calibration needs at least one training window")
    xt, yt = X.transpose(0, 2, 1), Y.transpose(0, 2, 1)
    H = Y.shape[1]
    vals: dict[str, float] = {}
    rel: dict[str, bool] = {}

    def put(keys, numbers, ok):
        for k, v in zip(keys, numbers):
            vals[k] = float(v)
            rel[k] = bool(ok)

    pooled = np.concatenate([X.ravel(), Y.ravel()])
    sd = float(np.std(pooled))
    put(["sigma_data"], [max(sd, SIGMA_FLOOR)], sd >= SIGMA_FLOOR)

    gaps = np.abs(Y[:, 0, :] - X[:, -1, :]).ravel()
    mu, sd, ok = _moments(gaps)
    put(["mu_diff", "sigma_diff", "z_p95"], [mu, sd, _pct((gaps - mu) / sd, 95)], ok)

    tr_in = np.abs(_np_stat(lsq_slope, xt)).ravel() if X.shape[1] >= 2 else np.zeros(0)
    tau = _pct(tr_in, 50)
    if H >= 2 and tr_in.size:
        tr_out = np.abs(_np_stat(lsq_slope, yt)).ravel()
        active = tr_in > tau
        ratios = tr_out[active] / tr_in[active]
    else:
        ratios = np.zeros(0)
    put(["tau_trend", "r_p95"], [tau, _pct(ratios, 95)], ratios.size >= MIN_RELIABLE)

    rho = _np_stat(lag1_autocorr, yt).ravel() if H >= 3 else np.zeros(0)
    mu, sd, ok = _moments(rho)
    put(["mu_rho", "sigma_rho", "z_rho_p95", "rho_p05"],
        [mu, sd, _pct(np.abs(rho - mu) / sd, 95), _pct(rho, 5)], ok)

    for s in SCALES:
        g = _np_stat(scale_gradient, yt, s).ravel() if H >= 2 * s else np.zeros(0)
        mu, sd, ok = _moments(g)
        put([f"mu_s{s}", f"sigma_s{s}", f"z_s{s}_p95"], [mu, sd, _pct(np.abs(g - mu) / sd, 95)], ok)

    if H >= 2:
        vx = _np_stat(floored_var, xt).ravel()
        vy = _np_stat(floored_var, yt).ravel()
        gam = np.abs(np.log(vy / vx))
        ok = gam.size >= MIN_RELIABLE
        put(["gamma_p95", "tau_var"], [_pct(gam, 95), _pct(vx, 50)], ok)
    else:
        put(["gamma_p95", "tau_var"], [0.0, 0.0], False)
    return ThresholdCalibration(vals, rel)


# -- weights and running distance ---------------------------------------------

@dataclass(frozen=True)
class ConstraintWeights:
    w_target: float = 0.20
    w_gradient: float = 0.12
    w_scale: float = 0.08
    w_boundary: float = 0.20
    w_trend: float = 0.12
    w_autocorr: float = 0.10
    w_multiscale: float = 0.10
    w_dynamic: float = 0.08

    def __post_init__(self):
        if any(getattr(self, f.name) < 0 for f in fields(self)):
            raise ValueError("constraint weights must be nonnegative")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)])


class RunningDistance:
    """EMA of the mean forecast-to-target manifold distance."""

    def __init__(self, momentum: float = 0.9, value: float = 0.0):
        self.momentum = momentum
        self.value = float(value)

    def update(self, batch_mean: float) -> float:
        self.value = self.momentum * self.value + (1.0 - self.momentum) * float(batch_mean)
        return self.value


# -- constraint evaluation ----------------------------------------------------

def _per_window(per_variate: tc.Tensor) -> tc.Tensor:
    return per_variate.mean(axis=-1)


def _zeros(B: int) -> tc.Tensor:
    return tc.Tensor(np.zeros(B))


def target_distance(Xhat, X_target, geo=PoincareBall) -> tc.Tensor:
    """Per-variate manifold distance ``[B, d]`` between embedded forecasts."""
    Xhat, X_target = tc.as_tensor(Xhat), tc.as_tensor(X_target)
    scale = 1.0 / np.sqrt(Xhat.shape[1])
    zp = geo.embed_t(Xhat.transpose(0, 2, 1) * scale)
    zt = geo.embed_t(X_target.transpose(0, 2, 1) * scale)
    return geo.dist_t(zp, zt)


def eval_logical(Xhat, X_target, cal: ThresholdCalibration, dbar: float = 0.0,
                 epsilon: float = 0.1, geo=PoincareBall, dist=None):
    """``(C_target, C_gradient, C_scale)``, each shaped ``[B]``."""
    Xhat, X_target = tc.as_tensor(Xhat), tc.as_tensor(X_target)
    if Xhat.shape != X_target.shape:
        raise ValueError(f"forecast {Xhat.shape} and target {X_target.shape} differ")
    B, H, _ = Xhat.shape
    sigma_data = cal["sigma_data"]
    xp, xt = Xhat.transpose(0, 2, 1), X_target.transpose(0, 2, 1)

    if dist is None:
        dist = target_distance(Xhat, X_target, geo)
    tau_adapt = 2.0 * epsilon * (1.0 + min(2.0, dbar))
    c_target = _per_window(tc.relu(dist * (1.0 / sigma_data) - tau_adapt))

    if H >= 2:
        gp, gt = _diff(xp), _diff(xt)
        cos = (gp * gt).sum(axis=-1) / tc.sqrt(((gp * gp).sum(axis=-1) + EPS)
                                               * ((gt * gt).sum(axis=-1) + EPS))
        c_grad = _per_window(tc.relu(0.5 - cos))
        ratio = floored_std(xp) / floored_std(xt)
        c_ratio = tc.relu(tc.absolute(ratio - 1.0) - 0.2)
    else:
        c_grad = _zeros(B)
        c_ratio = tc.Tensor(np.zeros((B, Xhat.shape[2])))
    c_mean = tc.relu(tc.absolute(xp.mean(axis=-1) - xt.mean(axis=-1)) * (1.0 / sigma_data) - 0.1)
    c_scale = _per_window(c_mean + c_ratio)
    return c_target, c_grad, c_scale


@dataclass(frozen=True)
class InputStats:
    """Lookback statistics the heuristic layer conditions on, each ``[B, d]``."""

    last: np.ndarray
    trend: np.ndarray | None
    var: np.ndarray | None

    @classmethod
    def from_input(cls, X_input) -> "InputStats":
        X = np.asarray(tc.as_tensor(X_input).data)
        xi = X.transpose(0, 2, 1)
        if X.shape[1] >= 2:
            return cls(X[:, -1, :], _np_stat(lsq_slope, xi), _np_stat(floored_var, xi))
        return cls(X[:, -1, :], None, None)

    def repeat(self, n: int) -> "InputStats":
        """Each window's row repeated ``n`` times consecutively."""
        rep = (lambda a: None if a is None else np.repeat(a, n, axis=0))
        return InputStats(rep(self.last), rep(self.trend), rep(self.var))


def eval_heuristic(Xhat, X_input, cal: ThresholdCalibration, X_last=None):
    """``(C_boundary, C_trend, C_autocorr, C_multiscale, C_dynamic)``, each ``[B]``.

    ``X_input`` is the lookback ``[B, L, d]`` or precomputed :class:`InputStats`.
    ``X_last`` overrides the value preceding the forecast (defaults to the last
    lookback row); proof segments pass the preceding forecast value here.
    """
    Xhat = tc.as_tensor(Xhat)
    st = X_input if isinstance(X_input, InputStats) else InputStats.from_input(X_input)
    B, H, d = Xhat.shape
    xp = Xhat.transpose(0, 2, 1)
    last = st.last if X_last is None else np.asarray(X_last)

    if cal.ok("sigma_diff"):
        gap = tc.absolute(Xhat[:, 0, :] - last)
        c_bound = _per_window(tc.relu((gap - cal["mu_diff"]) * (1.0 / cal["sigma_diff"]) - cal["z_p95"]))
    else:
        c_bound = _zeros(B)

    if H >= 2 and st.trend is not None and cal.ok("r_p95"):
        tr_in = st.trend
        gate = (np.abs(tr_in) > cal["tau_trend"]).astype(np.float64)
        tr_pred = lsq_slope(xp)
        flip = np.maximum(0.0, -np.sign(tr_in) * np.sign(tr_pred.data))
        safe_in = np.where(gate > 0, np.abs(tr_in), 1.0)
        ratio = tc.relu(tc.absolute(tr_pred) * (1.0 / safe_in) - cal["r_p95"])
        c_trend = _per_window((ratio + flip) * gate)
    else:
        c_trend = _zeros(B)

    if H >= 3 and cal.ok("sigma_rho"):
        rho = lag1_autocorr(xp)
        c_auto = _per_window(tc.relu(tc.absolute(rho - cal["mu_rho"]) * (1.0 / cal["sigma_rho"])
                                     - cal["z_rho_p95"]) + tc.relu(cal["rho_p05"] - rho))
    else:
        c_auto = _zeros(B)

    c_ms = _zeros(B)
    for s in SCALES:
        if H >= 2 * s and cal.ok(f"sigma_s{s}"):
            g = scale_gradient(xp, s)
            term = tc.relu(tc.absolute(g - cal[f"mu_s{s}"]) * (1.0 / cal[f"sigma_s{s}"])
                           - cal[f"z_s{s}_p95"])
            c_ms = c_ms + _per_window(term)

    if H >= 2 and st.var is not None and cal.ok("gamma_p95"):
        v_in = st.var
        gate = (v_in > cal["tau_var"]).astype(np.float64)
        logratio = tc.log(floored_var(xp) * (1.0 / v_in))
        c_dyn = _per_window(tc.relu(tc.absolute(logratio) - cal["gamma_p95"]) * gate)
    else:
        c_dyn = _zeros(B)
    return c_bound, c_trend, c_auto, c_ms, c_dyn


def violations(Xhat, X_input, X_target, cal: ThresholdCalibration, dbar: float = 0.0,
               epsilon: float = 0.1, geo=PoincareBall, X_last=None, dist=None) -> tc.Tensor:
    """All eight constraint values stacked as ``[B, 8]`` in :data:`NAMES` order."""
    logical = eval_logical(Xhat, X_target, cal, dbar, epsilon, geo, dist)
    heuristic = eval_heuristic(Xhat, X_input, cal, X_last)
    return tc.stack(list(logical) + list(heuristic), axis=-1)


def total_violation(values, w: ConstraintWeights | None = None):
    """Weighted sum over the last axis; tensors stay differentiable."""
    w = (w or ConstraintWeights()).as_array()
    if isinstance(values, tc.Tensor):
        return (values * w).sum(axis=-1)
    values = np.asarray(values, dtype=np.float64)
    if values.shape[-1] != N_CONSTRAINTS:
        raise ValueError(f"expected {N_CONSTRAINTS} constraint values")
    if np.any(values < 0):
        raise ValueError("constraint values must be nonnegative")
    return (values * w).sum(axis=-1)


# -- satisfaction rates ---------------------------------------------------------

@dataclass(frozen=True)
class CsrMetrics:
    csr_hard: float
    csr_soft: float
    epsilon: float = 0.1


def violation_degree(c, epsilon: float = 0.1) -> np.ndarray:
    """0 at the tolerance, rising linearly to 1 at ten times the tolerance."""
    return np.clip((np.abs(np.asarray(c, dtype=np.float64)) - epsilon) / (9.0 * epsilon), 0.0, 1.0)


def csr(totals, epsilon: float = 0.1) -> CsrMetrics:
    totals = np.asarray(totals, dtype=np.float64).ravel()
    if totals.size == 0:
        raise ValueError("csr needs at least one window")
    hard = float(np.mean(np.abs(totals) <= epsilon))
    # mean of per-window credit, so soft >= hard holds in floating point as well
    soft = float(np.mean(1.0 - violation_degree(totals, epsilon)))
    return CsrMetrics(hard, soft, epsilon)

"""Geodesic proof construction over a dyadic horizon tree, certificates, robustness sweeps.

A forecast ``X[H, d]`` is represented as ``d`` points on the ball in ``R^H``:
variate ``n`` becomes ``embed(X[:, n] / sqrt(H))``. Proof steps move every
component along its own geodesic; distances on the product are the root sum
of squared component distances.
"""
from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import constraints as cons
from . import tensor as tc
from .manifold import PoincareBall, product_dist
from .rng import Rng

DELTA = 0.02
EPSILON = 0.1
KAPPA = 1.0 + abs(-1.0) * DELTA
INNER_ITERS = 10
INNER_TAU = 0.1
MAX_HALVINGS = 6
THREADS_ENV = "CERTCAST_THREADS"


@dataclass
class ProofStep:
    point: np.ndarray          # [d, H]
    tangent: np.ndarray        # [d, H]
    segment: tuple[int, int]   # (level, index)
    residual_violation: float


@dataclass
class ProofObject:
    steps: list[ProofStep]
    terminal_distance: float
    terminal_violation: float
    start: np.ndarray          # [d, H]
    forecast: np.ndarray       # decoded terminal point, [H, d]

    @property
    def length(self) -> int:
        return len(self.steps)


@dataclass
class Certificate:
    valid: bool
    distance: float
    violation: float
    proof_length: int
    cert_time_ms: float
    delta: float = DELTA
    epsilon: float = EPSILON
    rho_max: float | None = None

    def to_dict(self) -> dict:
        out = {"valid": bool(self.valid), "distance": float(self.distance),
               "violation": float(self.violation), "proof_length": int(self.proof_length),
               "cert_time_ms": float(self.cert_time_ms)}
        if self.rho_max is not None:
            out["rho_max"] = float(self.rho_max)
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)


@dataclass
class ProofSettings:
    cal: cons.ThresholdCalibration
    dbar: float = 0.0
    epsilon: float = EPSILON
    delta: float = DELTA
    geo: type = PoincareBall
    weights: cons.ConstraintWeights = field(default_factory=cons.ConstraintWeights)
    inner_iters: int = INNER_ITERS
    tau: float = INNER_TAU


def n_levels(H: int) -> int:
    return math.ceil(math.log2(H)) + 1 if H > 1 else 1


def level_segments(H: int, level: int) -> list[tuple[int, int]]:
    """Non-empty ``[a, b)`` segments with edges ``floor(i H / 2^level)``."""
    k = 2 ** level
    edges = [(i * H) // k for i in range(k + 1)]
    return [(edges[i], edges[i + 1]) for i in range(k) if edges[i + 1] > edges[i]]


def _to_points(X: np.ndarray, geo) -> np.ndarray:
    H = X.shape[1]
    return geo.embed(np.asarray(X).transpose(0, 2, 1) / np.sqrt(H))


def _decode_t(p: tc.Tensor, geo) -> tc.Tensor:
    H = p.shape[-1]
    return (geo.decode_t(p) * np.sqrt(H)).transpose(0, 2, 1)


class _Problem:
    """Constraint objective for a batch of windows, in point coordinates."""

    def __init__(self, st: ProofSettings, stats: cons.InputStats, Y: np.ndarray):
        self.st = st
        self.stats = stats
        self.Y = Y
        self.w = st.weights

    def full(self, X: tc.Tensor, rows: np.ndarray) -> tc.Tensor:
        v = cons.violations(X, _take(self.stats, rows), self.Y[rows], self.st.cal,
                            self.st.dbar, self.st.epsilon, self.st.geo)
        return cons.total_violation(v, self.w)

    def segments(self, X: tc.Tensor, rows: np.ndarray, starts: np.ndarray, n: int) -> tc.Tensor:
        """Violation of segment ``[starts[j], starts[j] + n)`` of window ``rows[j]``."""
        B = len(rows)
        t_idx = starts[:, None] + np.arange(n)[None, :]
        seg = X[np.arange(B)[:, None], t_idx]                       # [B, n, d]
        tgt = self.Y[rows[:, None], t_idx]
        stats = _take(self.stats, rows)
        prev = np.where((starts > 0)[:, None], X.data[np.arange(B), np.maximum(starts - 1, 0)],
                        stats.last)
        v = cons.violations(seg, stats, tgt, self.st.cal, self.st.dbar, self.st.epsilon,
                            self.st.geo, X_last=prev)
        return cons.total_violation(v, self.w)


def _take(stats: cons.InputStats, rows) -> cons.InputStats:
    pick = (lambda a: None if a is None else a[rows])
    return cons.InputStats(stats.last[rows], pick(stats.trend), pick(stats.var))


def _segment_totals(prob: _Problem, X: np.ndarray, segs, rows) -> np.ndarray:
    """``[B, n_segments]`` violations, batched by segment length."""
    B = len(rows)
    out = np.zeros((B, len(segs)))
    Xt = tc.Tensor(X)
    by_len: dict[int, list[int]] = {}
    for j, (a, b) in enumerate(segs):
        by_len.setdefault(b - a, []).append(j)
    with tc.no_grad():
        for n, js in by_len.items():
            starts = np.array([segs[j][0] for j in js])
            r = np.repeat(np.arange(B), len(js))
            s = np.tile(starts, B)
            vals = prob.segments(tc.Tensor(Xt.data[r]), rows[r], s, n).data
            out[:, js] = vals.reshape(B, len(js))
    return out


def _objective(prob: _Problem, p: np.ndarray, rows, starts, lengths, need_grad: bool):
    geo = prob.st.geo
    pt = tc.Tensor(p, requires_grad=need_grad)
    X = _decode_t(pt, geo)
    J = prob.full(X, rows)
    total = J.sum()
    values = J.data.copy()
    for n in np.unique(lengths):
        sel = np.flatnonzero(lengths == n)
        Xs = tc.index(X, sel) if len(sel) < len(rows) else X
        seg = prob.segments(Xs, rows[sel], starts[sel], int(n))
        values[sel] += seg.data
        total = total + seg.sum()
    g = tc.grad(total, [pt])[0] if need_grad else None
    return values, g


def _inner_descent(prob: _Problem, p: np.ndarray, rows, starts, lengths) -> np.ndarray:
    """Bounded Riemannian descent with halving backtracking, batched over windows."""
    geo, st = prob.st.geo, prob.st
    q = p.copy()
    for _ in range(st.inner_iters):
        J, g = _objective(prob, q, rows, starts, lengths, True)
        direction = -geo.rgrad(q, g)
        tau = np.full(len(rows), st.tau)
        pending = np.ones(len(rows), dtype=bool)
        if not np.any(np.abs(g) > 0):
            break
        for _h in range(MAX_HALVINGS + 1):
            idx = np.flatnonzero(pending)
            if idx.size == 0:
                break
            cand = geo.exp(q[idx], tau[idx, None, None] * direction[idx])
            with tc.no_grad():
                Jc, _ = _objective(prob, cand, rows[idx], starts[idx], lengths[idx], False)
            better = Jc < J[idx]
            q[idx[better]] = cand[better]
            pending[idx[better]] = False
            tau[idx[~better]] *= 0.5
    return q


def build_proofs(Xhat, X_input, X_target, st: ProofSettings) -> list[ProofObject]:
    """One proof per window of ``Xhat[B, H, d]``; batched throughout."""
    Xhat = np.asarray(Xhat, dtype=np.float64)
    if not np.all(np.isfinite(Xhat)):
        raise ValueError("non-finite forecast")
    B, H, d = Xhat.shape
    if H < 1:
        raise ValueError("horizon must be >= 1")
    geo = st.geo
    stats = X_input if isinstance(X_input, cons.InputStats) else cons.InputStats.from_input(X_input)
    prob = _Problem(st, stats, np.asarray(X_target, dtype=np.float64))
    all_rows = np.arange(B)
    p = _to_points(Xhat, geo)
    start = p.copy()
    steps: list[list[ProofStep]] = [[] for _ in range(B)]

    for level in range(n_levels(H)):
        segs = level_segments(H, level)
        with tc.no_grad():
            X_now = _decode_t(tc.Tensor(p), geo).data
        seg_v = _segment_totals(prob, X_now, segs, all_rows)
        if not np.all(np.isfinite(seg_v)):
            raise ValueError("non-finite segment violation")
        worst = np.argmax(seg_v, axis=1)
        active = np.flatnonzero(seg_v[all_rows, worst] > st.epsilon / 2)
        if active.size == 0:
            continue
        seg_arr = np.array(segs)[worst[active]]
        q = _inner_descent(prob, p[active], active, seg_arr[:, 0], seg_arr[:, 1] - seg_arr[:, 0])
        v = geo.log(p[active], q)
        new = geo.exp(p[active], v)
        with tc.no_grad():
            resid = prob.full(_decode_t(tc.Tensor(new), geo), active).data
        for j, b in enumerate(active):
            steps[b].append(ProofStep(new[j], v[j], (level, int(worst[b])), float(resid[j])))
        p[active] = new

    with tc.no_grad():
        X_fin = _decode_t(tc.Tensor(p), geo).data
        viol = prob.full(tc.Tensor(X_fin), all_rows).data
    dist = product_dist(geo, p, geo.project(p))
    return [ProofObject(steps[b], float(dist[b]), float(viol[b]), start[b], X_fin[b])
            for b in range(B)]


def certify(proof: ProofObject, delta: float = DELTA, epsilon: float = EPSILON,
            cert_time_ms: float = 0.0) -> Certificate:
    valid = proof.terminal_distance < delta and proof.terminal_violation < epsilon
    return Certificate(bool(valid), proof.terminal_distance, proof.terminal_violation,
                       proof.length, cert_time_ms, delta, epsilon)


def _thread_count() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def certify_batch(Xhat, X_input, X_target, st: ProofSettings,
                  chunk: int = 128) -> tuple[list[Certificate], list[ProofObject]]:
    """Proofs and certificates for many windows; chunks may run on worker threads."""
    Xhat = np.asarray(Xhat)
    B = Xhat.shape[0]
    if B == 0:
        return [], []
    bounds = [(i, min(B, i + chunk)) for i in range(0, B, chunk)]

    def run(bound):
        a, b = bound
        t0 = time.perf_counter()
        proofs = build_proofs(Xhat[a:b], np.asarray(X_input)[a:b], np.asarray(X_target)[a:b], st)
        certs = [certify(pr, st.delta, st.epsilon) for pr in proofs]
        per = (time.perf_counter() - t0) * 1000.0 / (b - a)
        for c in certs:
            c.cert_time_ms = per
        return certs, proofs

    threads = _thread_count()
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, bounds))
    else:
        parts = [run(bd) for bd in bounds]
    certs = [c for cs, _ in parts for c in cs]
    proofs = [p for _, ps in parts for p in ps]
    return certs, proofs


@dataclass(frozen=True)
class CertificationSummary:
    cert_rate: float
    proof_len_mean: float
    cert_time_ms_mean: float
    n: int


def certification_rate(certs: list[Certificate]) -> CertificationSummary:
    if not certs:
        raise ValueError("certification rate needs at least one window")
    v = np.array([c.valid for c in certs], dtype=np.float64)
    return CertificationSummary(float(v.mean()), float(np.mean([c.proof_length for c in certs])),
                                float(np.mean([c.cert_time_ms for c in certs])), len(certs))


# -- certified robustness -------------------------------------------------------

@dataclass
class RobustnessResult:
    rho_max: float
    grid: list[tuple[float, float]]
    oracle_agrees: bool | None = None


def perturbation_directions(shape: tuple[int, int], trials: int, seed: int) -> np.ndarray:
    """``[trials, L, d]`` directions in the unit inf-ball: half sign corners, half uniform."""
    rng = Rng(seed).spawn("robustness")
    n_corner = trials // 2
    corners = np.where(rng.uniform((n_corner,) + shape) < 0.5, -1.0, 1.0)
    inner = rng.uniform((trials - n_corner,) + shape, -1.0, 1.0)
    return np.concatenate([corners, inner])


class RobustnessProbe:
    """Certifies perturbed copies of one window: ``forecast_fn(X[B, L, d]) -> [B, H, d]``."""

    def __init__(self, forecast_fn, x: np.ndarray, y: np.ndarray, st: ProofSettings):
        self.fn = forecast_fn
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.float64)
        self.st = st

    def valid(self, deltas: np.ndarray) -> np.ndarray:
        X = self.x[None] + deltas
        Xhat = self.fn(X)
        Y = np.broadcast_to(self.y, (len(X),) + self.y.shape)
        proofs = build_proofs(Xhat, X, Y, self.st)
        return np.array([certify(p, self.st.delta, self.st.epsilon).valid for p in proofs])


def certified_robustness(probe: RobustnessProbe, rho_hi: float = 0.5, trials: int = 256,
                         seed: int = 0, halvings: int = 20, grid_points: int = 9) -> RobustnessResult:
    """Largest inf-norm radius at which every sampled perturbation stays certified.

    ``rho`` counts as certified when the clean window and all ``trials`` scaled
    directions certify; the radius is located by bisection on ``[0, rho_hi]``.
    The grid reports, per radius, the fraction of directions certified at that
    radius and at every smaller grid radius.
    """
    L, d = probe.x.shape
    dirs = perturbation_directions((L, d), trials, seed)
    clean = bool(probe.valid(np.zeros((1, L, d)))[0])

    def ok(rho: float, chunk: int = 32) -> bool:
        if not clean:
            return False
        for i in range(0, trials, chunk):
            if not np.all(probe.valid(rho * dirs[i:i + chunk])):
                return False
        return True

    if not clean:
        rho_max = 0.0
    elif ok(rho_hi):
        rho_max = rho_hi
    else:
        lo, hi = 0.0, rho_hi
        for _ in range(halvings):
            mid = 0.5 * (lo + hi)
            if ok(mid):
                lo = mid
            else:
                hi = mid
        rho_max = lo

    radii = np.linspace(0.0, rho_hi, grid_points)
    alive = np.full(trials, clean)
    grid = []
    for r in radii:
        if r > 0:
            alive &= probe.valid(r * dirs)
        grid.append((float(r), float(alive.mean())))
    return RobustnessResult(float(rho_max), grid)


def dense_oracle(probe: RobustnessProbe, rho: float, extra: np.ndarray | None = None,
                 steps: int = 8) -> bool:
    """Exhaustive check on single-variate windows with ``L <= 8``.

    Every sign corner of the inf-ball is scaled by ``k/steps`` for
    ``k = 1..steps``; ``extra`` directions (already scaled) are appended.
    """
    L, d = probe.x.shape
    if d != 1 or L > 8:
        raise ValueError("dense oracle supports one variate and L <= 8")
    corners = np.array(np.meshgrid(*[[-1.0, 1.0]] * L, indexing="ij")).reshape(L, -1).T
    pts = [np.zeros((1, L, 1))]
    for k in range(1, steps + 1):
        pts.append((rho * k / steps) * corners[:, :, None])
    if extra is not None:
        pts.append(np.asarray(extra).reshape(-1, L, 1))
    return bool(np.all(probe.valid(np.concatenate(pts))))

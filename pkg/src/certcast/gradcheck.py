"""Central finite-difference checks for the autodiff engine.

Relative error of a gradient tensor is ``|a - n|_2 / max(|a|_2, |n|_2, 1e-8)``
where ``a`` is the analytic and ``n`` the numeric gradient. The step for a
coordinate ``x`` is ``1e-5 * max(1, |x|)``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as tc
from .rng import Rng

STEP = 1e-5
TOLERANCE = 1e-4


def rel_error(a: np.ndarray, n: np.ndarray) -> float:
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(n)), 1e-8)
    return float(np.linalg.norm(a - n)) / denom


def numeric_grad(fn: Callable[[], tc.Tensor], x: tc.Tensor, coords=None) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. ``x`` (optionally only at ``coords``)."""
    flat = x.data.reshape(-1)
    out = np.zeros_like(flat)
    idxs = range(flat.size) if coords is None else coords
    with tc.no_grad():
        for i in idxs:
            orig = flat[i]
            h = STEP * max(1.0, abs(orig))
            flat[i] = orig + h
            fp = fn().item()
            flat[i] = orig - h
            fm = fn().item()
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * h)
    return out.reshape(x.shape)


def check(fn: Callable[[], tc.Tensor], inputs: Sequence[tc.Tensor], max_coords: int | None = None,
          rng: Rng | None = None) -> float:
    """Largest relative error over ``inputs``; ``max_coords`` samples coordinates per input."""
    out = fn()
    analytic = tc.grad(out, inputs)
    worst = 0.0
    for x, a in zip(inputs, analytic):
        if max_coords is not None and x.size > max_coords:
            coords = np.sort((rng or Rng(0)).permutation(x.size)[:max_coords])
            num = numeric_grad(fn, x, coords).reshape(-1)[coords]
            err = rel_error(a.reshape(-1)[coords], num)
        else:
            err = rel_error(a, numeric_grad(fn, x))
        worst = max(worst, err)
    return worst


def _away_from(values: np.ndarray, kinks: Sequence[float], margin: float = 1e-3) -> np.ndarray:
    for k in kinks:
        close = np.abs(values - k) < margin
        values = np.where(close, k + np.sign(values - k + 1e-300) * margin * 2, values)
    return values


def _random_shape(rng: Rng, ndim_max: int = 3) -> tuple:
    nd = int(rng.integers(1, ndim_max + 1))
    return tuple(int(s) for s in rng.integers(1, 5, nd))


def _op_cases():
    """(name, builder) pairs; a builder maps an Rng to (fn, inputs)."""

    def unary(name, f, lo=-2.0, hi=2.0, kinks=()):
        def build(rng):
            shape = _random_shape(rng)
            x = tc.parameter(_away_from(rng.uniform(shape, lo, hi), kinks))
            w = rng.normal(shape)
            return (lambda: (f(x) * w).sum()), [x]
        return name, build

    def binary(name, f, positive_b=False):
        def build(rng):
            shape = _random_shape(rng)
            # trailing broadcast: b drops leading axes
            bshape = shape[int(rng.integers(0, len(shape) + 1)):] or (1,)
            a = tc.parameter(rng.uniform(shape, -2, 2))
            bv = rng.uniform(bshape, 0.5, 2.0) if positive_b else rng.uniform(bshape, -2, 2)
            b = tc.parameter(bv)
            w = rng.normal(shape)
            return (lambda: (f(a, b) * w).sum()), [a, b]
        return name, build

    def matmul_case(rng):
        m, k, n = (int(v) for v in rng.integers(1, 6, 3))
        lead = tuple(int(v) for v in rng.integers(1, 3, int(rng.integers(0, 2))))
        a = tc.parameter(rng.normal(lead + (m, k)))
        b = tc.parameter(rng.normal((k, n)))
        w = rng.normal(lead + (m, n))
        return (lambda: ((a @ b) * w).sum()), [a, b]

    def reduce_case(kind):
        def build(rng):
            shape = _random_shape(rng)
            axis = int(rng.integers(0, len(shape)))
            x = tc.parameter(rng.normal(shape))
            out_shape = shape[:axis] + shape[axis + 1:]
            w = rng.normal(out_shape) if out_shape else 1.0
            return (lambda: (tc.reduce(kind, x, axis) * w).sum()), [x]
        return kind, build

    def layernorm_case(rng):
        shape = _random_shape(rng)[:-1] + (int(rng.integers(2, 6)),)
        x = tc.parameter(rng.normal(shape))
        g = tc.parameter(rng.uniform(shape[-1:], 0.5, 1.5))
        b = tc.parameter(rng.normal(shape[-1:]))
        w = rng.normal(shape)
        return (lambda: (tc.layernorm(x, g, b, 1e-5) * w).sum()), [x, g, b]

    def softmax_case(rng):
        shape = _random_shape(rng)
        x = tc.parameter(rng.normal(shape))
        w = rng.normal(shape)
        return (lambda: (tc.softmax(x, -1) * w).sum()), [x]

    def fft_case(rng):
        lead = tuple(int(v) for v in rng.integers(1, 3, int(rng.integers(0, 2))))
        n = int(rng.integers(1, 20))
        x = tc.parameter(rng.normal(lead + (n,)))
        wr = rng.normal(lead + (n // 2 + 1,))
        wi = rng.normal(lead + (n // 2 + 1,))
        wt = rng.normal(lead + (n,))

        def f():
            s = tc.rfft(x)
            filt = tc.ComplexTensor(s.re * wr, s.im * wi)
            return (tc.irfft(filt, n) * wt).sum() + (s.re * wr).sum() + (s.im * wi).sum()
        return f, [x]

    def index_case(rng):
        shape = _random_shape(rng)
        x = tc.parameter(rng.normal(shape))
        idx = rng.integers(0, shape[0], 4)
        w = rng.normal((4,) + shape[1:])
        return (lambda: (x[idx] * w).sum() + (x[0:1] * 2.0).sum()), [x]

    return [
        binary("add", tc.add), binary("sub", tc.sub), binary("mul", tc.mul),
        binary("div", tc.div, positive_b=True),
        unary("relu", tc.relu, kinks=(0.0,)), unary("silu", tc.silu),
        unary("elu", tc.elu, kinks=(0.0,)), unary("tanh", tc.tanh),
        unary("sigmoid", tc.sigmoid), unary("exp", tc.exp), unary("cos", tc.cos),
        unary("neg", tc.neg), unary("softplus", tc.softplus), unary("asinh", tc.asinh),
        unary("abs", tc.absolute, kinks=(0.0,)),
        unary("log", tc.log, lo=0.2, hi=3.0), unary("sqrt", tc.sqrt, lo=0.2, hi=3.0),
        unary("clamp", lambda t: tc.clamp(t, -1.0, 1.0), kinks=(-1.0, 1.0)),
        ("matmul", matmul_case), reduce_case("mean"), reduce_case("var"), reduce_case("sum"),
        ("layernorm", layernorm_case), ("softmax", softmax_case), ("rfft_irfft", fft_case),
        ("index", index_case),
    ]


@dataclass
class GradcheckReport:
    per_op: dict = field(default_factory=dict)
    model_error: float = 0.0
    configs: int = 0
    seconds: float = 0.0

    @property
    def max_error(self) -> float:
        return max([self.model_error, *self.per_op.values()])


def run_suite(seed: int = 0, configs_per_op: int = 50, model_seeds: int = 2) -> GradcheckReport:
    """Every differentiable op on ``configs_per_op`` random configurations, plus a small full model."""
    from .model import Forecaster, ModelConfig

    t0 = time.perf_counter()
    report = GradcheckReport()
    root = Rng(seed)
    for name, build in _op_cases():
        rng = root.spawn(name)
        worst = 0.0
        for _ in range(configs_per_op):
            fn, inputs = build(rng)
            worst = max(worst, check(fn, inputs))
            report.configs += 1
        report.per_op[name] = worst

    for s in range(model_seeds):
        rng = root.spawn(f"model{s}")
        cfg = ModelConfig(L=12, H=6, d=3, D=8, n_layers=2, heads=2, ffn_mult=2, K=3, seed=seed + s)
        model = Forecaster(cfg)
        x = rng.normal((2, cfg.L, cfg.d))
        feats = rng.uniform((2, 2))
        target = rng.normal((2, cfg.H, cfg.d))

        def loss():
            out = model.forward(x, feats)
            return ((out - target) ** 2).mean()

        params = model.parameters()
        report.model_error = max(report.model_error, check(loss, params, max_coords=6, rng=rng))
        report.configs += 1

    rng = root.spawn("constraints")
    worst = 0.0
    for _ in range(configs_per_op):
        worst = max(worst, _constraint_case(rng))
        report.configs += 1
    report.per_op["constraints"] = worst
    report.seconds = time.perf_counter() - t0
    return report


def _constraint_case(rng: Rng) -> float:
    """Weighted violation of a random forecast, checked at a point away from ReLU kinks."""
    from . import constraints as cons

    B, L, H, d = 40, 16, 12, 2
    X = np.cumsum(rng.normal((B, L, d)), axis=1) * 0.3
    Y = X[:, -1:, :] + np.cumsum(rng.normal((B, H, d)), axis=1) * 0.3
    cal = cons.calibrate(X, Y)
    xhat = tc.Tensor(Y[:2] + 0.5 * rng.normal((2, H, d)), requires_grad=True)

    def fn():
        return cons.total_violation(cons.violations(xhat, X[:2], Y[:2], cal, 0.3)).sum()

    return check(fn, [xhat])

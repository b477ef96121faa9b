"""Poincare-ball geometry (curvature -1) and its flat stand-in for ablations.

Points live in the last axis; leading axes are batch or product-manifold
components. Tangent vectors are written in orthonormal-frame coordinates:
their Euclidean norm *is* their Riemannian length, so ``dist(p, exp_p(v))
== |v|``. An ambient (Euclidean) gradient ``g`` at ``z`` becomes the frame
vector ``((1 - |z|^2) / 2) g``; in ambient coordinates this is the usual
inverse-metric factor ``((1 - |z|^2) / 2)^2``.
"""
from __future__ import annotations

import numpy as np

from . import tensor as tc

CURVATURE = -1.0
BALL_MARGIN = 1e-7
MAX_NORM = 1.0 - BALL_MARGIN
# radius cap of the feasible projection: tanh(artanh(0.999))
PROJECTION_RADIUS = float(np.tanh(np.arctanh(0.999)))
_MIN_NORM = 1e-15


def _norm(x: np.ndarray) -> np.ndarray:
    return np.linalg.norm(x, axis=-1, keepdims=True)


def _sqnorm(x: np.ndarray) -> np.ndarray:
    return np.sum(x * x, axis=-1, keepdims=True)


def clip_to_ball(z: np.ndarray, max_norm: float = MAX_NORM) -> np.ndarray:
    n = _norm(z)
    return np.where(n > max_norm, z * (max_norm / np.maximum(n, _MIN_NORM)), z)


def _check_inside(*points: np.ndarray) -> None:
    for p in points:
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite point")
        if np.any(_sqnorm(p) >= 1.0):
            raise ValueError("point on or outside the unit ball")


def project_to_ball(h) -> np.ndarray:
    """``h / (1 + sqrt(1 + |h|^2))``; inverse of :func:`ball_decode`."""
    h = np.asarray(h, dtype=np.float64)
    if not np.all(np.isfinite(h)):
        raise ValueError("non-finite input to project_to_ball")
    return clip_to_ball(h / (1.0 + np.sqrt(1.0 + _sqnorm(h))))


def ball_decode(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return 2.0 * z / (1.0 - _sqnorm(z))


def mobius_add(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    xy = np.sum(x * y, axis=-1, keepdims=True)
    x2, y2 = _sqnorm(x), _sqnorm(y)
    num = (1.0 + 2.0 * xy + y2) * x + (1.0 - x2) * y
    return num / np.maximum(1.0 + 2.0 * xy + x2 * y2, _MIN_NORM)


def hyp_dist(a, b) -> np.ndarray:
    """Geodesic distance; ``arcosh(1 + 2u) == 2 asinh(sqrt(u))`` is used for accuracy."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _check_inside(a, b)
    u = _sqnorm(a - b) / ((1.0 - _sqnorm(a)) * (1.0 - _sqnorm(b)))
    return (2.0 * np.arcsinh(np.sqrt(u)))[..., 0]


def exp_map(p, v) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    _check_inside(p)
    n = _norm(v)
    safe = np.maximum(n, _MIN_NORM)
    step = np.where(n > 0, np.tanh(n / 2.0) * v / safe, 0.0)
    return clip_to_ball(mobius_add(p, step))


def log_map(p, q) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    _check_inside(p, q)
    w = mobius_add(-p, q)
    n = _norm(w)
    safe = np.maximum(n, _MIN_NORM)
    return np.where(n > 0, 2.0 * np.arctanh(np.minimum(n, MAX_NORM)) * w / safe, 0.0)


def egrad_to_rgrad(z, g) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return 0.5 * (1.0 - _sqnorm(z)) * np.asarray(g, dtype=np.float64)


def geodesic_constraint_step(z, grad, tau: float) -> np.ndarray:
    """One Riemannian descent step ``exp_z(-tau * rgrad)``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    return exp_map(z, -tau * egrad_to_rgrad(z, grad))


def feasible_projection(x) -> np.ndarray:
    """``tanh(|v|/2) v/|v|`` with ``v = log_0(x)``, capped at radius 0.999."""
    x = np.asarray(x, dtype=np.float64)
    _check_inside(x)
    v = log_map(np.zeros_like(x), x)
    n = _norm(v)
    out = np.where(n > 0, np.tanh(n / 2.0) * v / np.maximum(n, _MIN_NORM), 0.0)
    return clip_to_ball(out, PROJECTION_RADIUS)


# -- differentiable forms used inside constraint graphs ----------------------

def project_to_ball_t(h: tc.Tensor) -> tc.Tensor:
    sq = (h * h).sum(axis=-1, keepdims=True)
    return h / (1.0 + tc.sqrt(1.0 + sq))


def ball_decode_t(z: tc.Tensor) -> tc.Tensor:
    sq = (z * z).sum(axis=-1, keepdims=True)
    return 2.0 * z / (1.0 - sq)


def hyp_dist_t(a: tc.Tensor, b: tc.Tensor) -> tc.Tensor:
    diff = a - b
    u = (diff * diff).sum(axis=-1) / ((1.0 - (a * a).sum(axis=-1)) * (1.0 - (b * b).sum(axis=-1)))
    # the offset keeps d/du finite at coincident points, where du is exactly zero
    return 2.0 * tc.asinh(tc.sqrt(u + 1e-30))


class PoincareBall:
    """Bundle of the ball operations behind one interface."""

    hyperbolic = True

    embed = staticmethod(project_to_ball)
    decode = staticmethod(ball_decode)
    dist = staticmethod(hyp_dist)
    exp = staticmethod(exp_map)
    log = staticmethod(log_map)
    rgrad = staticmethod(egrad_to_rgrad)
    project = staticmethod(feasible_projection)
    embed_t = staticmethod(project_to_ball_t)
    decode_t = staticmethod(ball_decode_t)
    dist_t = staticmethod(hyp_dist_t)


def _euclid_dist_t(a: tc.Tensor, b: tc.Tensor) -> tc.Tensor:
    diff = a - b
    return tc.sqrt((diff * diff).sum(axis=-1) + 1e-30)


class Euclidean:
    """Identity embedding with flat distance; the hyperbolic ablation."""

    hyperbolic = False

    embed = staticmethod(lambda h: np.array(h, dtype=np.float64))
    decode = staticmethod(lambda z: np.array(z, dtype=np.float64))
    dist = staticmethod(lambda a, b: np.linalg.norm(np.asarray(a) - np.asarray(b), axis=-1))
    exp = staticmethod(lambda p, v: np.asarray(p) + np.asarray(v))
    log = staticmethod(lambda p, q: np.asarray(q) - np.asarray(p))
    rgrad = staticmethod(lambda z, g: np.asarray(g, dtype=np.float64))
    project = staticmethod(lambda x: np.array(x, dtype=np.float64))
    embed_t = staticmethod(lambda h: h)
    decode_t = staticmethod(lambda z: z)
    dist_t = staticmethod(_euclid_dist_t)


def geometry(hyperbolic: bool = True):
    return PoincareBall if hyperbolic else Euclidean


def product_dist(geo, a, b) -> np.ndarray:
    """Distance on a product of copies: components along axis -2."""
    d = geo.dist(a, b)
    return np.sqrt(np.sum(d * d, axis=-1))


def contraction_run(start, target, tau: float = 0.1, steps: int = 30) -> np.ndarray:
    """Riemannian descent on ``dist(theta, target)^2``; returns the distance trace.

    The ambient gradient of the squared distance is evaluated in closed form.
    """
    theta = np.asarray(start, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    trace = [float(hyp_dist(theta, target))]
    for _ in range(steps):
        g = _sq_dist_egrad(theta, target)
        theta = geodesic_constraint_step(theta, g, tau)
        trace.append(float(hyp_dist(theta, target)))
    return np.array(trace)


def _sq_dist_egrad(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Ambient gradient in ``a`` of ``hyp_dist(a, b)^2``."""
    a2, b2 = float(a @ a), float(b @ b)
    diff = a - b
    d2 = float(diff @ diff)
    alpha, beta = 1.0 - a2, 1.0 - b2
    x = 1.0 + 2.0 * d2 / (alpha * beta)
    dist = float(np.arccosh(max(x, 1.0)))
    if dist == 0.0:
        return np.zeros_like(a)
    # dx/da = 4/(alpha beta) (a - b) + 4 d2 a / (alpha^2 beta)
    dx = 4.0 / (alpha * beta) * diff + 4.0 * d2 * a / (alpha * alpha * beta)
    return 2.0 * dist / np.sqrt(x * x - 1.0) * dx

"""Parameter containers shared by the spectral head and the encoder."""
from __future__ import annotations

import numpy as np

from . import tensor as tc
from .rng import Rng


class Module:
    """Holds parameters as attributes; ``parameters()`` walks them in definition order."""

    def named_parameters(self, prefix: str = "") -> list[tuple[str, tc.Tensor]]:
        out = []
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, tc.Tensor) and value.requires_grad:
                out.append((full, value))
            elif isinstance(value, Module):
                out.extend(value.named_parameters(full + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.extend(item.named_parameters(f"{full}.{i}."))
        return out

    def parameters(self) -> list[tc.Tensor]:
        return [p for _, p in self.named_parameters()]


class Linear(Module):
    """Affine map over the last axis, initialised uniform in +-1/sqrt(fan_in)."""

    def __init__(self, n_in: int, n_out: int, rng: Rng, bias: bool = True):
        bound = 1.0 / np.sqrt(n_in)
        self.weight = tc.parameter(rng.uniform((n_in, n_out), -bound, bound))
        self.bias = tc.parameter(rng.uniform((n_out,), -bound, bound)) if bias else None

    def __call__(self, x) -> tc.Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ValueError(f"Linear expects width {self.weight.shape[0]}, got {x.shape[-1]}")
        y = tc.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class MLP3(Module):
    """Three affine layers with SiLU between them."""

    def __init__(self, n_in: int, hidden: int, n_out: int, rng: Rng):
        self.l1 = Linear(n_in, hidden, rng)
        self.l2 = Linear(hidden, hidden, rng)
        self.l3 = Linear(hidden, n_out, rng)

    def __call__(self, x) -> tc.Tensor:
        return self.l3(tc.silu(self.l2(tc.silu(self.l1(x)))))

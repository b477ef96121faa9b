"""Flat ``key=value`` run configuration; command-line ``--key value`` pairs override it."""
from __future__ import annotations

from dataclasses import dataclass, fields, replace
from pathlib import Path


class ConfigError(ValueError):
    """Unknown key or unparsable value."""


@dataclass(frozen=True)
class RunConfig:
    # data
    data: str = "synth:mixture"
    synth_d: int = 8
    synth_T: int = 5000
    synth_noise: float = 0.1
    L: int = 96
    H: int = 96
    # model
    D: int = 32
    n_layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    K: int = 8
    n_modes: int = -1
    # optimisation
    eta_base: float = 1e-4
    epochs: int = 10
    batch_size: int = 32
    lambda_start: float = 1.0
    lambda_end: float = 0.3
    alpha_start: float = 0.5
    alpha_end: float = 0.1
    epsilon_target: float = 0.1
    clip_norm: float = 10.0
    cert_windows: int = 32
    # certification
    delta: float = 0.02
    epsilon: float = 0.1
    eval_split: str = "test"
    eval_windows: int = -1
    # ablation switches
    hyperbolic: bool = True
    spectral: bool = True
    constrained: bool = True
    # experiments
    noise_levels: str = "0,0.05,0.10,0.15"
    rho_hi: float = 0.5
    trials: int = 256
    robust_windows: int = 4
    seeds: str = "0,1,2,3,4"
    scaling_horizons: str = "8,16,32,64,128,256,512"
    scaling_windows: int = 200
    gradcheck_configs: int = 50
    seed: int = 0
    out: str = "runs/default"

    def floats(self, key: str) -> list[float]:
        return [float(x) for x in str(getattr(self, key)).split(",") if x.strip()]

    def ints(self, key: str) -> list[int]:
        return [int(x) for x in str(getattr(self, key)).split(",") if x.strip()]

    def to_text(self) -> str:
        return "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n" for f in fields(self))


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.17g}"
    return str(v)


def _parse(key: str, text: str):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    text = text.strip()
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    return text


def parse_text(text: str) -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        key = key.strip()
        out[key] = _parse(key, value)
    return out


def parse_overrides(tokens: list[str]) -> dict:
    """``--key value`` or ``--key=value`` pairs."""
    out = {}
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        body = tok[2:].replace("-", "_") if "=" not in tok else tok[2:]
        if "=" in body:
            key, value = body.split("=", 1)
            key = key.replace("-", "_")
            i += 1
        else:
            if i + 1 >= len(tokens):
                raise ConfigError(f"missing value for {tok}")
            key, value = body, tokens[i + 1]
            i += 2
        out[key] = _parse(key, value)
    return out


def load_config(path: str | None = None, overrides: list[str] | None = None) -> RunConfig:
    values = {}
    if path:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(path)
        values.update(parse_text(p.read_text()))
    values.update(parse_overrides(overrides or []))
    return replace(RunConfig(), **values)

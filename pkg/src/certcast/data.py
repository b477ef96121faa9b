"""CSV ingestion, chronological windowing, normalisation, synthetic series, input noise."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from datetime import datetime

import numpy as np

from . import binio
from .rng import Rng
from .spectral import time_anchors

log = logging.getLogger(__name__)

STD_FLOOR = 1e-8
SPLITS = ("train", "val", "test")
SYNTH_KINDS = ("sine", "trend", "damped", "mixture")


@dataclass
class RawSeries:
    names: list[str]
    values: np.ndarray                      # [T, d]
    timestamps: np.ndarray | None = None    # [T] seconds, or None
    dropped_rows: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


def _parse_time(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return datetime.fromisoformat(text.strip()).timestamp()


def load_csv(path) -> RawSeries:
    """Header row, optional leading ``date`` column, numeric columns after it."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise ValueError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    has_date = header[0].lower() == "date"
    names = header[1:] if has_date else header
    if not names:
        raise ValueError(f"{path}: no value columns")
    values, stamps, dropped = [], [], 0
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        cells = row[1:] if has_date else row
        if any(c.strip() == "" for c in cells):
            dropped += 1
            continue
        try:
            parsed = [float(c) for c in cells]
        except ValueError as exc:
            raise ValueError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
        if not all(np.isfinite(parsed)):
            dropped += 1
            continue
        values.append(parsed)
        if has_date:
            stamps.append(_parse_time(row[0]))
    if not values:
        raise ValueError(f"{path}: no complete data rows")
    if dropped:
        log.warning("%s: dropped %d rows with missing values", path, dropped)
    ts = np.array(stamps, dtype=np.float64) if has_date else None
    return RawSeries(names, np.array(values, dtype=np.float64), ts, dropped)


def save_csv(series: RawSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(series.names)
        for row in series.values:
            w.writerow([f"{v:.17g}" for v in row])


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    floored: np.ndarray

    def normalize(self, x):
        return (np.asarray(x) - self.mean) / self.std

    def denormalize(self, z):
        return np.asarray(z) * self.std + self.mean


@dataclass
class SeriesBatch:
    """Windows of one split: lookback ``X[N, L, d]``, horizon ``Y[N, H, d]``."""

    split: str
    X: np.ndarray
    Y: np.ndarray
    feats: np.ndarray       # [N, 2]
    starts: np.ndarray      # global index of each window's first lookback row

    def __len__(self) -> int:
        return self.X.shape[0]

    def subset(self, idx) -> "SeriesBatch":
        return SeriesBatch(self.split, self.X[idx], self.Y[idx], self.feats[idx], self.starts[idx])


@dataclass
class WindowedDataset:
    L: int
    H: int
    train: SeriesBatch
    val: SeriesBatch
    test: SeriesBatch
    norm: NormStats

    @property
    def d(self) -> int:
        return self.train.X.shape[2]

    def split(self, name: str) -> SeriesBatch:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def save(self, path) -> None:
        arrays = [np.array([self.L, self.H], dtype=np.float64), self.norm.mean, self.norm.std,
                  self.norm.floored.astype(np.float64)]
        for name in SPLITS:
            b = self.split(name)
            arrays += [b.X, b.Y, b.feats, b.starts.astype(np.float64)]
        binio.save(path, arrays)

    @classmethod
    def load(cls, path) -> "WindowedDataset":
        arrays = binio.load(path)
        L, H = (int(v) for v in arrays[0])
        norm = NormStats(arrays[1], arrays[2], arrays[3].astype(bool))
        batches = []
        for i, name in enumerate(SPLITS):
            X, Y, f, s = arrays[4 + 4 * i: 8 + 4 * i]
            batches.append(SeriesBatch(name, X, Y, f, s.astype(np.int64)))
        return cls(L, H, *batches, norm)


def split_bounds(T: int, ratios=(0.7, 0.1, 0.2)) -> list[tuple[int, int]]:
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be three nonnegative numbers summing to 1")
    n_train = int(T * ratios[0])
    n_val = int(T * ratios[1])
    cuts = [0, n_train, n_train + n_val, T]
    return [(cuts[i], cuts[i + 1]) for i in range(3)]


def window_count(T_split: int, L: int, H: int) -> int:
    return max(0, T_split - L - H + 1)


def window_split(series: RawSeries, L: int = 96, H: int = 96, ratios=(0.7, 0.1, 0.2)) -> WindowedDataset:
    T, d = series.values.shape
    if T < L + H:
        raise ValueError(f"series of length {T} is shorter than L+H={L + H}")
    bounds = split_bounds(T, ratios)
    a, b = bounds[0]
    train_vals = series.values[a:b] if b > a else series.values
    std = train_vals.std(axis=0)
    floored = std < STD_FLOOR
    norm = NormStats(train_vals.mean(axis=0), np.where(floored, STD_FLOOR, std), floored)
    if floored.any():
        log.warning("std floor applied to variates %s", np.flatnonzero(floored).tolist())
    z = norm.normalize(series.values)

    if series.timestamps is not None and T > 1:
        gaps = np.diff(series.timestamps)
        med = float(np.median(gaps))
        med = med if med > 0 else 1.0
    else:
        gaps, med = None, 1.0

    batches = []
    for name, (lo, hi) in zip(SPLITS, bounds):
        n = window_count(hi - lo, L, H)
        starts = lo + np.arange(n, dtype=np.int64)
        if n:
            idx = starts[:, None] + np.arange(L + H)[None, :]
            win = z[idx]
            X, Y = win[:, :L], win[:, L:]
        else:
            X, Y = np.zeros((0, L, d)), np.zeros((0, H, d))
        if gaps is not None and n:
            csum = np.concatenate([[0.0], np.cumsum(gaps)])
            mean_gap = (csum[starts + L - 1] - csum[starts]) / max(L - 1, 1) / med
        else:
            mean_gap = np.ones(n)
        feats = np.stack([starts / T, mean_gap], axis=1) if n else np.zeros((0, 2))
        batches.append(SeriesBatch(name, X, Y, feats, starts))
    return WindowedDataset(L, H, *batches, norm)


def add_noise(batch: SeriesBatch, std: float, seed: int) -> SeriesBatch:
    """Gaussian noise on lookback inputs only.

    Draws are keyed by (seed, split, window start), so one window sees the same
    standard-normal pattern at every noise level.
    """
    if std < 0:
        raise ValueError("noise std must be nonnegative")
    if std == 0:
        return replace(batch, X=batch.X.copy())
    root = Rng(seed).spawn(f"noise:{batch.split}")
    L, d = batch.X.shape[1:]
    Z = np.stack([root.spawn(int(s)).normal((L, d)) for s in batch.starts]) if len(batch) else 0.0
    return replace(batch, X=batch.X + std * Z)


# -- synthetic generators -----------------------------------------------------

def damped_series(A, alpha, omega, phi, T: int) -> np.ndarray:
    """Damped-oscillator sum on the basis time grid, ``[T, d]`` from ``[d, K]`` parameters."""
    A, alpha, omega, phi = (np.asarray(p, dtype=np.float64) for p in (A, alpha, omega, phi))
    t = time_anchors(T, A.shape[-1])                       # [T, K]
    terms = A[None] * np.exp(alpha[None] * t[:, None]) * np.cos(omega[None] * t[:, None] + phi[None])
    return terms.sum(axis=-1)


def _sines(rng: Rng, d: int, T: int) -> tuple[np.ndarray, dict]:
    t = np.arange(T, dtype=np.float64)
    periods = rng.uniform((d, 2), 12.0, 72.0)
    amps = rng.uniform((d, 2), 0.5, 1.5)
    phases = rng.uniform((d, 2), 0.0, 2 * np.pi)
    x = (amps[None] * np.sin(2 * np.pi * t[:, None, None] / periods[None] + phases[None])).sum(-1)
    return x, {"periods": periods, "amps": amps, "phases": phases}


def _damped(rng: Rng, d: int, T: int, K: int = 4) -> tuple[np.ndarray, dict]:
    p = {"A": rng.uniform((d, K), 0.5, 1.5),
         "alpha": rng.uniform((d, K), -3.0, 0.0),
         "omega": rng.uniform((d, K), 0.05, 0.5) * T,
         "phi": rng.uniform((d, K), 0.0, 2 * np.pi)}
    return damped_series(p["A"], p["alpha"], p["omega"], p["phi"], T), p


def synth_generate(kind: str, d: int, T: int, seed: int, noise: float = 0.1) -> RawSeries:
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r}; choose from {SYNTH_KINDS}")
    if T < 64:
        raise ValueError("synthetic series need T >= 64")
    if d < 1:
        raise ValueError("d must be >= 1")
    rng = Rng(seed).spawn(f"synth:{kind}")
    t = np.arange(T, dtype=np.float64)
    meta: dict = {"kind": kind}
    if kind == "sine":
        x, meta["sine"] = _sines(rng, d, T)
    elif kind == "trend":
        slopes = rng.uniform(d, -2.0, 2.0) / T
        x, meta["sine"] = _sines(rng, d, T)
        x = x * 0.5 + slopes[None] * t[:, None] * 3.0
        meta["slopes"] = slopes
    elif kind == "damped":
        x, meta["damped"] = _damped(rng, d, T)
    else:
        s, meta["sine"] = _sines(rng, d, T)
        dm, meta["damped"] = _damped(rng, d, T)
        slopes = rng.uniform(d, -1.0, 1.0) / T
        meta["slopes"] = slopes
        x = s + 0.5 * dm + slopes[None] * t[:, None]
    if noise > 0:
        x = x + noise * rng.normal((T, d))
    names = [f"v{i}" for i in range(d)]
    return RawSeries(names, x, None, 0, meta)

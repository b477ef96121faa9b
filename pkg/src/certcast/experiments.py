"""End-to-end runs: train/evaluate, noise sweeps, ablations, proof-length and contraction scans."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import binio
from . import certification as cert
from . import constraints as cons
from . import data
from . import manifold
from . import tensor as tc
from .config import RunConfig
from .manifold import geometry
from .metrics import MetricsRecord, epochs_to_converge, epochs_to_target
from .model import Forecaster, ModelConfig
from .rng import Rng
from .training import FitResult, OptimizerConfig, evaluate_split, fit

log = logging.getLogger(__name__)


def load_series(cfg: RunConfig) -> data.RawSeries:
    """``synth:<kind>[:<seed>]`` or a CSV path."""
    if cfg.data.startswith("synth:"):
        parts = cfg.data.split(":")
        seed = int(parts[2]) if len(parts) > 2 else 0
        return data.synth_generate(parts[1], cfg.synth_d, cfg.synth_T, seed, cfg.synth_noise)
    return data.load_csv(cfg.data)


def build_dataset(cfg: RunConfig) -> data.WindowedDataset:
    return data.window_split(load_series(cfg), cfg.L, cfg.H)


def model_config(cfg: RunConfig, d: int) -> ModelConfig:
    return ModelConfig(L=cfg.L, H=cfg.H, d=d, D=cfg.D, n_layers=cfg.n_layers, heads=cfg.heads,
                       ffn_mult=cfg.ffn_mult, K=cfg.K, n_modes=None if cfg.n_modes < 0 else cfg.n_modes,
                       spectral=cfg.spectral, seed=cfg.seed)


def optimizer_config(cfg: RunConfig) -> OptimizerConfig:
    return OptimizerConfig(eta_base=cfg.eta_base, epochs=cfg.epochs, batch_size=cfg.batch_size,
                           lambda_start=cfg.lambda_start, lambda_end=cfg.lambda_end,
                           alpha_start=cfg.alpha_start, alpha_end=cfg.alpha_end,
                           epsilon_target=cfg.epsilon_target, clip_norm=cfg.clip_norm,
                           seed=cfg.seed, constrained=cfg.constrained, cert_windows=cfg.cert_windows)


@dataclass
class TrainedRun:
    model: Forecaster
    dataset: data.WindowedDataset
    calibration: cons.ThresholdCalibration
    dbar: float
    history: list[dict]
    fit: FitResult | None = None


def train_run(cfg: RunConfig, dataset: data.WindowedDataset | None = None) -> TrainedRun:
    ds = dataset if dataset is not None else build_dataset(cfg)
    model = Forecaster(model_config(cfg, ds.d))
    res = fit(model, ds, optimizer_config(cfg), hyperbolic=cfg.hyperbolic, epsilon=cfg.epsilon,
              delta=cfg.delta)
    return TrainedRun(model, ds, res.calibration, res.dbar, res.history, res)


def save_run(run: TrainedRun, out_dir, cfg: RunConfig) -> None:
    from .metrics import append_jsonl
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    binio.save(out / "params.bin", run.model.state_arrays() + [np.array([run.dbar])])
    run.calibration.save(out / "calibration.txt")
    hist = out / "history.jsonl"
    hist.write_text("")
    for entry in run.history:
        append_jsonl(hist, entry)
    (out / "config.txt").write_text(cfg.to_text())


def load_run(cfg: RunConfig, dataset: data.WindowedDataset | None = None) -> TrainedRun:
    out = Path(cfg.out)
    for name in ("params.bin", "calibration.txt"):
        if not (out / name).is_file():
            raise FileNotFoundError(str(out / name))
    ds = dataset if dataset is not None else build_dataset(cfg)
    model = Forecaster(model_config(cfg, ds.d))
    arrays = binio.load(out / "params.bin")
    model.load_state_arrays(arrays[:-1])
    cal = cons.ThresholdCalibration.load(out / "calibration.txt")
    hist_path = out / "history.jsonl"
    history = [json.loads(line) for line in hist_path.read_text().splitlines() if line.strip()] \
        if hist_path.is_file() else []
    return TrainedRun(model, ds, cal, float(arrays[-1][0]), history)


def _eval_batch(cfg: RunConfig, run: TrainedRun) -> data.SeriesBatch:
    batch = run.dataset.split(cfg.eval_split)
    if cfg.eval_windows >= 0:
        batch = batch.subset(slice(0, cfg.eval_windows))
    if len(batch) == 0:
        raise ValueError(f"split {cfg.eval_split!r} has no windows")
    return batch


def settings(cfg: RunConfig, run: TrainedRun) -> cert.ProofSettings:
    return cert.ProofSettings(run.calibration, run.dbar, cfg.epsilon, cfg.delta, geometry(cfg.hyperbolic))


def evaluate_run(cfg: RunConfig, run: TrainedRun, batch: data.SeriesBatch | None = None):
    """Metrics over the evaluation split plus per-window certificates and proofs."""
    batch = _eval_batch(cfg, run) if batch is None else batch
    pred = run.model.predict(batch.X, batch.feats)
    m = evaluate_split(run.model, batch, run.calibration, run.dbar, cfg.epsilon,
                       geometry(cfg.hyperbolic), 0, cfg.delta, predictions=pred)
    certs, proofs = cert.certify_batch(pred, batch.X, batch.Y, settings(cfg, run))
    s = cert.certification_rate(certs)
    etc = epochs_to_converge([h["val_mse"] for h in run.history]) if run.history else None
    rec = MetricsRecord(m["mse"], m["mae"], m["csr_hard"], m["csr_soft"], s.cert_rate,
                        s.proof_len_mean, s.cert_time_ms_mean, None, etc)
    return rec, certs, proofs


def soundness_violations(certs, proofs, kappa: float = cert.KAPPA, epsilon: float = cert.EPSILON) -> int:
    """Certified windows whose certified forecast exceeds ``kappa * epsilon`` total violation."""
    return sum(1 for c, p in zip(certs, proofs) if c.valid and not p.terminal_violation <= kappa * epsilon)


# -- robustness -----------------------------------------------------------------

def robustness_sweep(cfg: RunConfig, run: TrainedRun) -> list[dict]:
    base = _eval_batch(cfg, run)
    rows = []
    st = settings(cfg, run)
    for std in cfg.floats("noise_levels"):
        noisy = data.add_noise(base, std, cfg.seed)
        rec, certs, proofs = evaluate_run(cfg, run, noisy)
        rows.append({"std": std, "mse": rec.mse, "mae": rec.mae, "csr_hard": rec.csr_hard,
                     "csr_soft": rec.csr_soft, "cert_rate": rec.cert_rate,
                     "proof_len_mean": rec.proof_len_mean,
                     "certified_over_tolerance": sum(1 for c in certs if c.valid and not c.violation < st.epsilon),
                     "certified_over_bound": soundness_violations(certs, proofs, cert.KAPPA, st.epsilon)})
    return rows


def rho_sweep(cfg: RunConfig, run: TrainedRun) -> list[cert.RobustnessResult]:
    batch = _eval_batch(cfg, run)
    st = settings(cfg, run)
    out = []
    for i in range(min(cfg.robust_windows, len(batch))):
        feats = batch.feats[i:i + 1]
        fn = (lambda X, f=feats: run.model.predict(X, np.repeat(f, len(X), axis=0)))
        probe = cert.RobustnessProbe(fn, batch.X[i], batch.Y[i], st)
        out.append(cert.certified_robustness(probe, cfg.rho_hi, cfg.trials, cfg.seed + i))
    return out


# -- ablation and convergence ---------------------------------------------------------

ABLATION_VARIANTS = (
    {"hyperbolic": True, "spectral": True},
    {"hyperbolic": False, "spectral": True},
    {"hyperbolic": True, "spectral": False},
    {"hyperbolic": False, "spectral": False},
)


def ablate(cfg: RunConfig, dataset: data.WindowedDataset | None = None) -> list[dict]:
    ds = dataset if dataset is not None else build_dataset(cfg)
    rows = []
    for variant in ABLATION_VARIANTS:
        vcfg = replace(cfg, **variant)
        run = train_run(vcfg, ds)
        rec, _, _ = evaluate_run(vcfg, run)
        row = {"variant": _variant_name(variant), "hyperbolic": variant["hyperbolic"],
               "spectral": variant["spectral"], "constrained": vcfg.constrained, "seed": vcfg.seed}
        row.update(rec.to_dict())
        rows.append(row)
    return rows


def _variant_name(v: dict) -> str:
    return ("hyp" if v["hyperbolic"] else "euc") + "+" + ("spec" if v["spectral"] else "lin")


@dataclass
class RaceResult:
    seed: int
    target: float
    epochs_constrained: int | None
    epochs_unconstrained: int | None
    history_constrained: list[float]
    history_unconstrained: list[float]

    @property
    def constrained_no_slower(self) -> bool:
        if self.epochs_constrained is None:
            return False
        return self.epochs_unconstrained is None or self.epochs_constrained <= self.epochs_unconstrained


def convergence_race(cfg: RunConfig, seeds, dataset: data.WindowedDataset | None = None,
                     target_slack: float = 0.02) -> list[RaceResult]:
    """Constrained hyperbolic run against the unconstrained run, per seed.

    The target is ``(1 + slack)`` times the worse of the two runs' best
    validation MSE, so both runs reach it within the epoch budget.
    """
    ds = dataset if dataset is not None else build_dataset(cfg)
    out = []
    for seed in seeds:
        hc = [h["val_mse"] for h in train_run(replace(cfg, seed=seed, constrained=True,
                                                      hyperbolic=True), ds).history]
        hu = [h["val_mse"] for h in train_run(replace(cfg, seed=seed, constrained=False), ds).history]
        target = (1.0 + target_slack) * max(min(hc), min(hu))
        out.append(RaceResult(seed, target, epochs_to_target(hc, target), epochs_to_target(hu, target), hc, hu))
    return out


# -- proof-length scaling and contraction ------------------------------------------------

SCALING_FORECAST_NOISE = 0.3


def noisy_target_forecast(Y: np.ndarray, std: float, seed: int) -> np.ndarray:
    """Targets plus seeded Gaussian error: a forecaster with a controlled error level."""
    return Y + std * Rng(seed).spawn("scaling-forecast").normal(Y.shape)


def scaling_scan(cfg: RunConfig, horizons=None, windows: int | None = None) -> dict:
    """Proof lengths across horizons for forecasts with fixed error, plus a log-linear fit."""
    horizons = list(horizons or cfg.ints("scaling_horizons"))
    windows = windows or cfg.scaling_windows
    rows = []
    for H in horizons:
        T = int(np.ceil((cfg.L + H + windows) / 0.2)) + 1
        series = data.synth_generate(cfg.data.split(":")[1] if cfg.data.startswith("synth:") else "mixture",
                                     1, max(T, 64), cfg.seed, cfg.synth_noise)
        ds = data.window_split(series, cfg.L, H)
        cal = cons.calibrate(ds.train.X, ds.train.Y)
        test = ds.test.subset(slice(0, windows))
        st = cert.ProofSettings(cal, 0.0, cfg.epsilon, cfg.delta, geometry(cfg.hyperbolic))
        t0 = time.perf_counter()
        fc = noisy_target_forecast(test.Y, SCALING_FORECAST_NOISE, cfg.seed + H)
        certs, _ = cert.certify_batch(fc, test.X, test.Y, st, chunk=256)
        lengths = np.array([c.proof_length for c in certs])
        rows.append({"H": H, "windows": len(test), "log2H": float(np.log2(H)),
                     "proof_len_mean": float(lengths.mean()), "proof_len_max": int(lengths.max()),
                     "bound": cert.n_levels(H), "cert_rate": float(np.mean([c.valid for c in certs])),
                     "seconds": time.perf_counter() - t0})
    x = np.array([r["log2H"] for r in rows])
    y = np.array([r["proof_len_mean"] for r in rows])
    a, b, r2 = linear_fit(x, y)
    return {"rows": rows, "intercept": a, "slope": b, "r2": r2}


def linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares ``y = a + b x`` and its coefficient of determination."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    A = np.stack([np.ones_like(x), x], axis=1)
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (a + b * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else 1.0
    return float(a), float(b), r2


def contraction_study(instances: int = 20, dim: int = 8, steps: int = 30, tau: float = 0.1,
                      seed: int = 0) -> dict:
    """Distance ratios of Riemannian descent toward random targets on the ball."""
    rng = Rng(seed).spawn("contraction")
    ratios = []
    for _ in range(instances):
        pts = []
        for _k in range(2):
            v = rng.normal(dim)
            v *= rng.uniform(None, 0.2, 2.5) / np.linalg.norm(v)
            pts.append(manifold.exp_map(np.zeros(dim), v))
        trace = manifold.contraction_run(pts[0], pts[1], tau, steps)
        ok = trace[:-1] > 1e-12
        ratios.append(trace[1:][ok] / trace[:-1][ok])
    after_first = np.concatenate([r[1:] for r in ratios])
    return {"instances": instances, "max_ratio_after_first": float(after_first.max()),
            "rho_hat": float(np.exp(np.mean(np.log(after_first)))),
            "all_contracting": bool(np.all(after_first < 1.0))}

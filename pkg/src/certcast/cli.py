"""Command-line front end.

Exit codes: 0 ok, 2 bad usage or unknown config key, 3 missing file,
4 training diverged, 5 invariant suite failed.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .config import ConfigError, RunConfig, load_config
from .metrics import append_jsonl, emit_metrics, to_csv
from .training import TrainingDiverged

EXIT_USAGE, EXIT_MISSING, EXIT_DIVERGED, EXIT_INVARIANT = 2, 3, 4, 5
COMMANDS = ("train", "eval", "certify", "robustness", "ablate", "gradcheck", "synth", "scaling")

log = logging.getLogger("certcast")


def _write_rows(path: Path, rows: list[dict]) -> None:
    path.write_text("")
    for r in rows:
        append_jsonl(path, r)


def _write_table(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    lines = [to_csv(r).splitlines() for r in rows]
    path.write_text("\n".join([lines[0][0]] + [ln[1] for ln in lines]) + "\n")


def cmd_train(cfg: RunConfig) -> int:
    run = ex.train_run(cfg)
    ex.save_run(run, cfg.out, cfg)
    print(f"trained {len(run.history)} epochs; artifacts in {cfg.out}")
    return 0


def _loaded(cfg: RunConfig):
    return ex.load_run(cfg)


def cmd_eval(cfg: RunConfig) -> int:
    run = _loaded(cfg)
    rec, _, _ = ex.evaluate_run(cfg, run)
    emit_metrics(rec, cfg.out)
    print(Path(cfg.out, "metrics.json").read_text(), end="")
    return 0


def cmd_certify(cfg: RunConfig) -> int:
    run = _loaded(cfg)
    rec, certs, _ = ex.evaluate_run(cfg, run)
    out = Path(cfg.out)
    with open(out / "certificates.jsonl", "w") as fh:
        for c in certs:
            fh.write(c.to_json() + "\n")
    emit_metrics(rec, out)
    print(f"cert_rate {rec.cert_rate:.4f} over {len(certs)} windows")
    return 0


def cmd_robustness(cfg: RunConfig) -> int:
    run = _loaded(cfg)
    out = Path(cfg.out)
    rows = ex.robustness_sweep(cfg, run)
    _write_rows(out / "robustness.jsonl", rows)
    _write_table(out / "robustness.csv", rows)
    results = ex.rho_sweep(cfg, run)
    grid_rows = [{"window": i, "rho": r, "cert_rate": c} for i, res in enumerate(results) for r, c in res.grid]
    _write_table(out / "robustness_grid.csv", grid_rows)
    if results:
        rec, _, _ = ex.evaluate_run(cfg, run)
        rec.rho_max_mean = float(sum(r.rho_max for r in results) / len(results))
        emit_metrics(rec, out)
    for r in rows:
        print(f"std={r['std']:.2f} mse={r['mse']:.4f} csr_hard={r['csr_hard']:.3f} cert_rate={r['cert_rate']:.3f}")
    return 0


def cmd_ablate(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = ex.ablate(cfg)
    _write_rows(out / "ablation.jsonl", rows)
    _write_table(out / "ablation.csv", rows)
    for r in rows:
        print(f"{r['variant']}: mse={r['mse']:.4f} cert_rate={r['cert_rate']:.3f}")
    return 0


def cmd_gradcheck(cfg: RunConfig) -> int:
    from .gradcheck import TOLERANCE, run_suite
    report = run_suite(cfg.seed, cfg.gradcheck_configs)
    for name, err in report.per_op.items():
        print(f"{name:12s} {err:.3e}")
    print(f"model        {report.model_error:.3e}")
    print(f"max relative error {report.max_error:.3e} over {report.configs} configurations "
          f"in {report.seconds:.1f}s")
    return 0 if report.max_error < TOLERANCE else EXIT_INVARIANT


def cmd_synth(cfg: RunConfig) -> int:
    from .data import save_csv
    series = ex.load_series(cfg)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "synth.csv"
    save_csv(series, path)
    print(f"wrote {series.T}x{series.d} series to {path}")
    return 0


def cmd_scaling(cfg: RunConfig) -> int:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    scan = ex.scaling_scan(cfg)
    _write_table(out / "scaling.csv", scan["rows"])
    con = ex.contraction_study(seed=cfg.seed)
    summary = {"proof_len_intercept": scan["intercept"], "proof_len_slope": scan["slope"],
               "proof_len_r2": scan["r2"], "rho_hat": con["rho_hat"],
               "max_ratio_after_first": con["max_ratio_after_first"]}
    emit_metrics(summary, out, "scaling_metrics")
    bound_ok = all(r["proof_len_max"] <= r["bound"] for r in scan["rows"])
    print(f"R2={scan['r2']:.3f} slope={scan['slope']:.3f} rho_hat={con['rho_hat']:.4f}")
    return 0 if bound_ok and con["all_contracting"] else EXIT_INVARIANT


HANDLERS = {"train": cmd_train, "eval": cmd_eval, "certify": cmd_certify,
            "robustness": cmd_robustness, "ablate": cmd_ablate, "gradcheck": cmd_gradcheck,
            "synth": cmd_synth, "scaling": cmd_scaling}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="certcast", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="key=value configuration file")
    parser.add_argument("-v", "--verbose", action="store_true")
    args, rest = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, rest)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: missing file {exc}", file=sys.stderr)
        return EXIT_MISSING
    try:
        return HANDLERS[args.command](cfg)
    except FileNotFoundError as exc:
        print(f"error: missing file {exc}", file=sys.stderr)
        return EXIT_MISSING
    except TrainingDiverged as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())

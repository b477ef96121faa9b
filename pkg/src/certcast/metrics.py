"""Metrics records with a stable, exactly round-tripping text form."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from pathlib import Path

WALL_CLOCK_FIELDS = ("cert_time_ms_mean",)
RATE_FIELDS = ("csr_hard", "csr_soft", "cert_rate")


@dataclass
class MetricsRecord:
    mse: float
    mae: float
    csr_hard: float
    csr_soft: float
    cert_rate: float
    proof_len_mean: float
    cert_time_ms_mean: float
    rho_max_mean: float | None = None
    epochs_to_converge: int | None = None

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _check(record: dict) -> None:
    for k, v in record.items():
        if isinstance(v, float) and not math.isfinite(v):
            raise ValueError(f"non-finite metric {k}={v}")
    for k in RATE_FIELDS:
        v = record.get(k)
        if v is not None and not 0.0 <= v <= 1.0:
            raise ValueError(f"{k}={v} outside [0, 1]")


def _value(v) -> str:
    if v is None:
        return "null"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        text = f"{v:.17g}"
        # keep floats recognisable as floats after parsing
        return text if any(c in text for c in ".en") else text + ".0"
    return json.dumps(v)


def to_json_line(record: dict) -> str:
    """One JSON object, keys in insertion order, floats at 17 significant digits."""
    _check(record)
    return "{" + ", ".join(f"{json.dumps(k)}: {_value(v)}" for k, v in record.items()) + "}\n"


def to_csv(record: dict) -> str:
    _check(record)
    header = ",".join(record)
    row = ",".join("" if v is None else _value(v) for v in record.values())
    return header + "\n" + row + "\n"


def emit_metrics(record, out_dir, stem: str = "metrics") -> tuple[Path, Path]:
    rec = record.to_dict() if isinstance(record, MetricsRecord) else dict(record)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jpath, cpath = out / f"{stem}.json", out / f"{stem}.csv"
    jpath.write_text(to_json_line(rec))
    cpath.write_text(to_csv(rec))
    return jpath, cpath


def append_jsonl(path, record: dict) -> None:
    with open(path, "a") as fh:
        fh.write(to_json_line(record))


def read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def without_wall_clock(record: dict) -> dict:
    return {k: v for k, v in record.items() if k not in WALL_CLOCK_FIELDS and not k.endswith("_seconds")}


def epochs_to_converge(val_mse: list[float], tolerance: float = 0.02) -> int:
    """First epoch (1-based) whose validation MSE is within ``tolerance`` of the best."""
    if not val_mse:
        raise ValueError("empty history")
    best = min(val_mse)
    for i, v in enumerate(val_mse):
        if v <= best * (1.0 + tolerance):
            return i + 1
    return len(val_mse)


def epochs_to_target(val_mse: list[float], target: float) -> int | None:
    for i, v in enumerate(val_mse):
        if v <= target:
            return i + 1
    return None

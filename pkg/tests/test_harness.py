import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from certcast import certification as cert
from certcast import cli, metrics
from certcast import experiments as ex
from certcast.config import ConfigError, RunConfig, load_config, parse_overrides, parse_text

TINY = ["--synth_d", "2", "--synth_T", "500", "--L", "16", "--H", "8", "--D", "8", "--heads", "2",
        "--K", "3", "--epochs", "1", "--eta_base", "0.05", "--cert_windows", "2", "--eval_windows", "6"]


def test_defaults_carry_reference_constants():
    c = RunConfig()
    assert (c.L, c.H, c.D, c.heads, c.K, c.batch_size) == (96, 96, 32, 4, 8, 32)
    assert (c.delta, c.epsilon, c.clip_norm, c.eta_base) == (0.02, 0.1, 10.0, 1e-4)
    assert (c.lambda_start, c.lambda_end, c.alpha_start, c.alpha_end) == (1.0, 0.3, 0.5, 0.1)
    assert c.floats("noise_levels") == [0.0, 0.05, 0.10, 0.15]
    assert c.ints("seeds") == [0, 1, 2, 3, 4]


def test_config_text_round_trip(tmp_path):
    c = RunConfig(eta_base=0.125, hyperbolic=False, data="synth:sine:3")
    p = tmp_path / "c.txt"
    p.write_text(c.to_text())
    assert load_config(str(p)) == c


def test_overrides():
    assert parse_overrides(["--eta-base", "0.5", "--spectral=false"]) == {"eta_base": 0.5, "spectral": False}
    assert parse_text("# note\nL = 12  # lookback\n") == {"L": 12}
    for bad in (["--nope", "1"], ["--L", "x"], ["--L"], ["L", "3"], ["--hyperbolic", "maybe"]):
        with pytest.raises(ConfigError):
            parse_overrides(bad)
    with pytest.raises(ConfigError):
        parse_text("just words")


def test_metrics_round_trip_bit_exact(tmp_path):
    rec = metrics.MetricsRecord(0.1 + 0.2, 1 / 3, 0.5, 0.75, 1.0, 3.0, 12.345678901234567, None, 4)
    jp, cp = metrics.emit_metrics(rec, tmp_path)
    back = metrics.read_jsonl(jp)[0]
    assert back == rec.to_dict()
    assert isinstance(back["proof_len_mean"], float)
    assert cp.read_text().splitlines()[0].split(",")[0] == "mse"
    jp2, _ = metrics.emit_metrics(back, tmp_path / "again")
    assert jp2.read_text() == jp.read_text()


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_text_exact(x):
    assert json.loads(metrics.to_json_line({"v": x}))["v"] == x


def test_metrics_validation():
    with pytest.raises(ValueError):
        metrics.to_json_line({"mse": math.nan})
    with pytest.raises(ValueError):
        metrics.to_json_line({"cert_rate": 1.5})
    assert metrics.without_wall_clock({"mse": 1.0, "cert_time_ms_mean": 3.0, "train_seconds": 2.0}) == {"mse": 1.0}


def test_convergence_helpers():
    assert metrics.epochs_to_converge([1.0, 0.5, 0.3, 0.305, 0.3]) == 3
    assert metrics.epochs_to_target([1.0, 0.5, 0.3], 0.6) == 2
    assert metrics.epochs_to_target([1.0], 0.5) is None
    with pytest.raises(ValueError):
        metrics.epochs_to_converge([])


def test_race_result_rule():
    r = ex.RaceResult(0, 1.0, 3, 4, [], [])
    assert r.constrained_no_slower
    assert not ex.RaceResult(0, 1.0, 5, 4, [], []).constrained_no_slower
    assert not ex.RaceResult(0, 1.0, None, 4, [], []).constrained_no_slower


def test_linear_fit():
    a, b, r2 = ex.linear_fit([0, 1, 2, 3], [1, 3, 5, 7])
    assert (a, b) == pytest.approx((1.0, 2.0)) and r2 == pytest.approx(1.0)


def test_contraction_study_frozen():
    res = ex.contraction_study(instances=5, seed=1)
    assert res["all_contracting"]
    assert res["rho_hat"] == pytest.approx(0.8, abs=1e-9)


def test_cli_usage_errors(capsys):
    assert cli.main(["train", "--unknown_key", "1"]) == cli.EXIT_USAGE
    assert cli.main(["train", "--config", "/no/such/file.txt"]) == cli.EXIT_MISSING
    with pytest.raises(SystemExit) as e:
        cli.main(["fly"])
    assert e.value.code == 2


def test_cli_eval_without_artifacts(tmp_path):
    assert cli.main(["eval", *TINY, "--out", str(tmp_path / "none")]) == cli.EXIT_MISSING


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_cli_divergence_exit(tmp_path):
    args = [*TINY, "--eta_base", "1e200", "--clip_norm", "1e300", "--out", str(tmp_path)]
    assert cli.main(["train", *args]) == cli.EXIT_DIVERGED


def test_cli_synth_and_csv_training(tmp_path):
    assert cli.main(["synth", "--synth_d", "2", "--synth_T", "300", "--out", str(tmp_path)]) == 0
    csv = tmp_path / "synth.csv"
    out = tmp_path / "run"
    args = [*TINY, "--data", str(csv), "--out", str(out)]
    assert cli.main(["train", *args]) == 0
    assert cli.main(["certify", *args]) == 0
    lines = (out / "certificates.jsonl").read_text().splitlines()
    rate = metrics.read_jsonl(out / "metrics.json")[0]["cert_rate"]
    assert len(lines) == 6
    assert rate == sum(json.loads(l)["valid"] for l in lines) / len(lines)


def test_cli_gradcheck(capsys):
    assert cli.main(["gradcheck", "--gradcheck_configs", "3"]) == 0
    assert "max relative error" in capsys.readouterr().out


@pytest.mark.slow
def test_cli_ablate_and_robustness(tmp_path):
    args = [*TINY, "--out", str(tmp_path), "--noise_levels", "0,0.1", "--trials", "4",
            "--robust_windows", "1", "--rho_hi", "0.2"]
    assert cli.main(["ablate", *args]) == 0
    rows = metrics.read_jsonl(tmp_path / "ablation.jsonl")
    assert [r["variant"] for r in rows] == ["hyp+spec", "euc+spec", "hyp+lin", "euc+lin"]
    assert cli.main(["train", *args]) == 0
    assert cli.main(["robustness", *args]) == 0
    rob = metrics.read_jsonl(tmp_path / "robustness.jsonl")
    assert [r["std"] for r in rob] == [0.0, 0.1]
    assert all(r["certified_over_tolerance"] == 0 for r in rob)
    assert "rho_max_mean" in metrics.read_jsonl(tmp_path / "metrics.json")[0]
    assert (tmp_path / "robustness_grid.csv").read_text().startswith("window,rho,cert_rate")


def test_cli_scaling(tmp_path):
    args = ["--L", "16", "--scaling_horizons", "4,8,16", "--scaling_windows", "10", "--out", str(tmp_path)]
    assert cli.main(["scaling", *args]) == 0
    rows = (tmp_path / "scaling.csv").read_text().splitlines()
    assert len(rows) == 4 and rows[0].startswith("H,windows")
    summary = metrics.read_jsonl(tmp_path / "scaling_metrics.json")[0]
    assert 0 < summary["rho_hat"] < 1


def test_soundness_counter():
    good = cert.Certificate(True, 0.0, 0.05, 1, 0.0)
    proof = cert.ProofObject([], 0.0, 0.5, np.zeros((1, 1)), np.zeros((1, 1)))
    assert ex.soundness_violations([good], [proof]) == 1

import csv
import subprocess
import sys

import numpy as np
import pytest

from dyndiff.cli import main
from dyndiff.checkpoint import load_checkpoint

TINY = """[model]
d_model = 16
[encoder]
channels = 8
layers = 2
[denoiser]
heads = 2
ff_dim = 32
[diffusion]
steps = 10
[train]
steps = 30
batch = 16
context = 24
horizon = 10
val_every = 10
val_windows = 32
[eval]
max_windows = 4
"""


def rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "tiny.ini").write_text(TINY, encoding="utf-8")
    assert main(["synth", "--kind", "ar2_seasonal", "--length", "1500", "--seed", "0", "--out", str(d / "ar.csv")]) == 0
    assert main(["train", "--data", str(d / "ar.csv"), "--config", str(d / "tiny.ini"),
                 "--out", str(d / "run"), "--seed", "7"]) == 0
    return d


def test_synth_constant(tmp_path):
    assert main(["synth", "--kind", "constant", "--length", "200", "--seed", "1", "--out", str(tmp_path / "c.csv")]) == 0
    r = rows(tmp_path / "c.csv")
    assert len(r) == 200 and {x["value"] for x in r} == {"5.0"}


def test_synth_reproducible_and_schema(tmp_path):
    for name in ("a", "b"):
        main(["synth", "--kind", "regime_switch_bimodal", "--length", "50", "--seed", "4", "--out", str(tmp_path / name)])
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()
    assert list(rows(tmp_path / "a")[0]) == ["timestamp", "latency", "regime"]


def test_usage_errors_exit_2(tmp_path):
    r = subprocess.run([sys.executable, "-m", "dyndiff", "train", "--out", str(tmp_path)], capture_output=True, text=True)
    assert r.returncode == 2 and "--data" in r.stderr
    r = subprocess.run([sys.executable, "-m", "dyndiff", "synth", "--kind", "sawtooth", "--length", "5",
                        "--seed", "0", "--out", str(tmp_path / "x.csv")], capture_output=True, text=True)
    assert r.returncode == 2


def test_unknown_config_key_exit_2(work):
    code = main(["train", "--data", str(work / "ar.csv"), "--out", str(work / "bad"), "--set", "train.speed=3"])
    assert code == 2


def test_runtime_error_exit_1(work, tmp_path):
    assert main(["train", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "o")]) == 1


def test_train_outputs(work):
    out = work / "run"
    log = rows(out / "train_log.csv")
    assert list(log[0]) == ["step", "loss", "grad_norm"] and len(log) == 30
    assert (out / "train_loss.png").read_bytes()[:4] == b"\x89PNG"
    ck = load_checkpoint(out / "checkpoint.ckpt")
    assert ck.config["train"]["seed"] == 7


def test_train_twice_identical(work):
    main(["train", "--data", str(work / "ar.csv"), "--config", str(work / "tiny.ini"),
          "--out", str(work / "run2"), "--seed", "7"])
    for name in ("checkpoint.ckpt", "train_log.csv", "train_loss.png"):
        assert (work / "run" / name).read_bytes() == (work / "run2" / name).read_bytes()


def test_unconditional_flag(work):
    main(["train", "--data", str(work / "ar.csv"), "--config", str(work / "tiny.ini"),
          "--out", str(work / "base"), "--unconditional", "--set", "train.steps=5"])
    ck = load_checkpoint(work / "base" / "checkpoint.ckpt")
    assert ck.config["train"]["unconditional"] is True and "denoiser.uncond.latent" in ck.params


def test_forecast_outputs(work):
    args = ["forecast", "--checkpoint", str(work / "run" / "checkpoint.ckpt"), "--data", str(work / "ar.csv"),
            "--samples", "100", "--origin", "1200", "--point", "--seed", "3"]
    assert main(args + ["--out", str(work / "fc")]) == 0
    ens = rows(work / "fc" / "ensemble.csv")
    assert list(ens[0]) == ["path_id", "variable", "step", "value"] and len(ens) == 1000
    point = rows(work / "fc" / "point.csv")
    vals = np.array([float(r["value"]) for r in ens]).reshape(100, 10)
    np.testing.assert_allclose([float(r["value"]) for r in point], vals.mean(axis=0))
    truth = rows(work / "fc" / "truth.csv")
    data = rows(work / "ar.csv")
    assert [float(r["value"]) for r in truth] == [float(data[i]["value"]) for i in range(1201, 1211)]
    main(args + ["--out", str(work / "fc2")])
    for name in ("ensemble.csv", "point.csv", "truth.csv", "forecast.png"):
        assert (work / "fc" / name).read_bytes() == (work / "fc2" / name).read_bytes()


def test_forecast_rolls_past_horizon(work):
    assert main(["forecast", "--checkpoint", str(work / "run" / "checkpoint.ckpt"), "--data", str(work / "ar.csv"),
                 "--samples", "3", "--horizon", "25", "--out", str(work / "roll")]) == 0
    assert len(rows(work / "roll" / "ensemble.csv")) == 75
    assert not (work / "roll" / "truth.csv").exists()


def test_forecast_covariates_cannot_roll(work):
    main(["synth", "--kind", "regime_switch_bimodal", "--length", "1500", "--seed", "0", "--out", str(work / "rs.csv")])
    main(["train", "--data", str(work / "rs.csv"), "--config", str(work / "tiny.ini"), "--out", str(work / "rsrun"),
          "--set", "train.steps=3", "--targets", "latency"])
    code = main(["forecast", "--checkpoint", str(work / "rsrun" / "checkpoint.ckpt"), "--data", str(work / "rs.csv"),
                 "--samples", "2", "--horizon", "11", "--out", str(work / "rsfc")])
    assert code == 1


def test_forecast_origin_out_of_range(work):
    code = main(["forecast", "--checkpoint", str(work / "run" / "checkpoint.ckpt"), "--data", str(work / "ar.csv"),
                 "--origin", "5", "--out", str(work / "bad")])
    assert code == 1


def test_evaluate_oracle_identity(work):
    assert main(["evaluate", "--checkpoint", str(work / "run" / "checkpoint.ckpt"), "--data", str(work / "ar.csv"),
                 "--config", str(work / "tiny.ini"), "--oracle-identity", "--out", str(work / "oracle")]) == 0
    for r in rows(work / "oracle" / "metrics.csv"):
        assert float(r["mean"]) == 0.0


def test_evaluate_trials_and_baseline(work):
    assert main(["evaluate", "--checkpoint", str(work / "run" / "checkpoint.ckpt"), "--data", str(work / "ar.csv"),
                 "--config", str(work / "tiny.ini"), "--baseline", str(work / "base" / "checkpoint.ckpt"),
                 "--samples", "5", "--trials", "2", "--out", str(work / "ev")]) == 0
    text = (work / "ev" / "report.txt").read_text(encoding="utf-8")
    assert "trials = 2" in text and "overall.crps = " in text and " +- " in text
    assert "label = conditional" in text and "label = unconditional" in text
    comp = rows(work / "ev" / "comparison.csv")
    crps = [float(r["crps"]) for r in comp]
    assert crps == sorted(crps) and {r["method"] for r in comp} == {"conditional", "unconditional"}
    assert (work / "ev" / "metrics.png").exists()


def test_evaluate_rejects_long_horizon(work):
    code = main(["evaluate", "--checkpoint", str(work / "run" / "checkpoint.ckpt"), "--data", str(work / "ar.csv"),
                 "--horizons", "1,11", "--out", str(work / "bad")])
    assert code == 1


def test_hist(work):
    fc = work / "fc"
    base = ["hist", "--ensemble", str(fc / "ensemble.csv"), "--truth", str(fc / "truth.csv")]
    assert main(base + ["--position", "3", "--out", str(work / "h3")]) == 0
    h = rows(work / "h3" / "hist.csv")
    assert list(h[0]) == ["bin_left", "bin_right", "count", "series_tag"]
    model = [r for r in h if r["series_tag"] == "model"]
    assert len(model) == 20 and sum(int(r["count"]) for r in model) == 100
    assert sum(int(r["count"]) for r in h if r["series_tag"] == "truth") == 1
    assert main(base + ["--aggregate", "--out", str(work / "hall")]) == 0
    hall = rows(work / "hall" / "hist.csv")
    assert sum(int(r["count"]) for r in hall if r["series_tag"] == "model") == 1000
    ens_vals = [float(r["value"]) for r in rows(fc / "ensemble.csv")] + [float(r["value"]) for r in rows(fc / "truth.csv")]
    assert float(hall[0]["bin_left"]) == min(ens_vals) and float(hall[19]["bin_right"]) == max(ens_vals)
    assert (work / "hall" / "hist.png").exists()
    assert main(base + ["--position", "11", "--out", str(work / "hbad")]) == 1


def test_hist_needs_a_mode(work):
    with pytest.raises(SystemExit) as exc:
        main(["hist", "--ensemble", "a", "--truth", "b", "--out", str(work / "x")])
    assert exc.value.code == 2

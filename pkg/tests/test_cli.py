import csv
import json
import subprocess
import sys

import pytest

from behavior_forecast import cli

TINY_SET = ["--set", "head_widths=8", "--set", "dropout=0", "--embed-dim", "8", "--hidden", "8",
            "--max-epochs", "2", "--batch-size", "8", "--lr", "1e-3"]


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert cli.main(["synth", "--preset", "conversational", "--sessions", "5", "--length", "250",
                     "--seed", "3", "--out", str(out)]) == 0
    return out


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _train(data, out, *extra):
    return cli.main(["train", "--data", str(data), "--out", str(out), "--obs-frames", "10", *TINY_SET, *extra])


def test_synth_writes_manifest(data):
    m = json.loads((data / "manifest.json").read_text())
    assert m["preset"] == "conversational" and len(m["sha256"]) == 3 + 5
    assert (data / "train" / "sessions.jsonl").exists()


def test_train_then_eval(data, tmp_path):
    assert _train(data, tmp_path / "run") == 0
    for f in ("model.ckpt", "history.csv", "manifest.json"):
        assert (tmp_path / "run" / f).exists()
    assert len(_rows(tmp_path / "run" / "history.csv")) == 2
    man = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert man["run_config"]["obs_len"] == 10 and man["seed"] == 0
    rc = cli.main(["eval", "--data", str(data / "test"), "--out", str(tmp_path / "ev"),
                   "--checkpoint", str(tmp_path / "run" / "model.ckpt"), "--baseline", "zero-velocity"])
    assert rc == 0
    rows = _rows(tmp_path / "ev" / "metrics.csv")
    assert [r["model"] for r in rows] == ["zero-velocity", "model"]
    segs = json.loads((tmp_path / "ev" / "segments.json").read_text())
    assert {s["predictor"] for s in segs} == {"model", "zero-velocity"}


def test_rerun_is_byte_identical(data, tmp_path):
    for k in ("a", "b"):
        assert _train(data, tmp_path / k, "--seed", "5") == 0
        assert cli.main(["eval", "--data", str(data / "test"), "--out", str(tmp_path / k / "ev"),
                         "--checkpoint", str(tmp_path / k / "model.ckpt")]) == 0
    for f in ("model.ckpt", "history.csv", "ev/metrics.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_sweep_freeze(data, tmp_path):
    assert cli.main(["eval", "--data", str(data / "test"), "--out", str(tmp_path), "--baseline", "linear-prop",
                     "--baseline", "zero-velocity", "--sweep-freeze"]) == 0
    rows = _rows(tmp_path / "metrics.csv")
    assert len(rows) == 2 * 51
    assert rows[0]["model"] == "linear-prop@0"
    lp0 = {k: v for k, v in rows[0].items() if k != "model"}
    zv = {k: v for k, v in rows[51].items() if k != "model"}
    assert lp0 == zv


def test_freeze_after_zero_equals_zero_velocity(data, tmp_path):
    cli.main(["eval", "--data", str(data / "test"), "--out", str(tmp_path / "f"), "--baseline", "rto-mean",
              "--freeze-after", "0"])
    cli.main(["eval", "--data", str(data / "test"), "--out", str(tmp_path / "z"), "--baseline", "zero-velocity"])
    a, b = _rows(tmp_path / "f" / "metrics.csv")[0], _rows(tmp_path / "z" / "metrics.csv")[0]
    a.pop("model"), b.pop("model")
    assert a == b


def test_attention_command(data, tmp_path):
    assert _train(data, tmp_path, "--arch", "transformer-t", "--set", "depth=1", "--set", "heads=2",
                  "--max-epochs", "1") == 0
    out = tmp_path / "att.csv"
    assert cli.main(["attention", "--checkpoint", str(tmp_path / "model.ckpt"), "--data", str(data / "test"),
                     "--out", str(out)]) == 0
    rows = _rows(out)
    assert rows[0]["sample"] == "mean" and len(rows[0]) == 11
    assert abs(sum(float(v) for k, v in rows[0].items() if k != "sample") - 1) < 1e-9


@pytest.mark.parametrize("argv", [
    [],
    ["train"],
    ["train", "--data", "x", "--horizon", "20"],
    ["synth", "--preset", "dance"],
    ["synth", "--sessions", "2"],
    ["eval", "--data", "x"],
])
def test_usage_errors(argv, tmp_path, capsys):
    argv = [a if a != "x" else str(tmp_path) for a in argv]
    with pytest.raises(SystemExit) as e:
        raise SystemExit(cli.main(argv))
    assert e.value.code == 1


def test_unknown_config_key(data, tmp_path):
    assert _train(data, tmp_path, "--set", "colour=blue") == 1
    cfg = tmp_path / "c.txt"
    cfg.write_text("# tiny run\nembed_dim = 8\nhidden = 8\n")
    assert cli.make_run_config(cli.parse_config_text(cfg.read_text())).embed_dim == 8


def test_data_errors(data, tmp_path):
    assert cli.main(["eval", "--data", str(tmp_path), "--baseline", "zero-velocity"]) == 2
    assert cli.main(["eval", "--data", str(data / "test"), "--checkpoint", str(tmp_path / "none.ckpt")]) == 2
    assert cli.main(["train", "--data", str(tmp_path)]) == 2


def test_numeric_failure(data, tmp_path):
    assert _train(data, tmp_path, "--lr", "nan") == 3


def test_console_script_help():
    r = subprocess.run([sys.executable, "-m", "behavior_forecast.cli", "train", "--help"], capture_output=True,
                       text=True)
    assert r.returncode == 0
    assert "tcn_dilations" in r.stdout
